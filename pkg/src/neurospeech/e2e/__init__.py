"""End-to-end sentence decoding through a LoRA-adapted toy decoder LM."""

from .aligner import ModalityAligner, contrastive_loss, info_nce, masked_mean
from .decoder_lm import DecoderConfig, ToyDecoderLM, pretrain_lm
from .lora import LoraLinear, attach_lora, lora_parameter_count
from .model import (
    E2EConfig,
    EndToEndModel,
    ProjectorMLP,
    decode_trials,
    e2e_losses,
    e2e_train_step,
    evaluate_wer,
    nucleus_filter,
    nucleus_sample,
    train_e2e,
)
from .vocab import PROMPT_TEXT, TokenVocab, prompt_tokens

__all__ = [
    "ModalityAligner",
    "contrastive_loss",
    "info_nce",
    "masked_mean",
    "DecoderConfig",
    "ToyDecoderLM",
    "pretrain_lm",
    "LoraLinear",
    "attach_lora",
    "lora_parameter_count",
    "E2EConfig",
    "EndToEndModel",
    "ProjectorMLP",
    "decode_trials",
    "e2e_losses",
    "e2e_train_step",
    "evaluate_wer",
    "nucleus_filter",
    "nucleus_sample",
    "train_e2e",
    "PROMPT_TEXT",
    "TokenVocab",
    "prompt_tokens",
]
