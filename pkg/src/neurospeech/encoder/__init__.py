"""Time-patch transformer encoder, masked pretraining and CTC fine-tuning."""

from .model import EncoderModel, PatchConfig, n_masked, patchify, sample_mask, unpatchify
from .training import (
    AugmentConfig,
    MaskConfig,
    TrainConfig,
    TrainResult,
    evaluate_per,
    evaluate_r2,
    finetune_ctc,
    make_batch,
    masked_mse,
    predict_log_probs,
    pretrain,
    pretrain_step,
    reconstruction_r2,
)
from .transformer import MultiHeadAttention, TransformerBlock, rope_rotate

__all__ = [
    "EncoderModel",
    "PatchConfig",
    "patchify",
    "unpatchify",
    "sample_mask",
    "n_masked",
    "rope_rotate",
    "MultiHeadAttention",
    "TransformerBlock",
    "AugmentConfig",
    "MaskConfig",
    "TrainConfig",
    "TrainResult",
    "make_batch",
    "masked_mse",
    "reconstruction_r2",
    "pretrain_step",
    "pretrain",
    "evaluate_r2",
    "finetune_ctc",
    "evaluate_per",
    "predict_log_probs",
]
