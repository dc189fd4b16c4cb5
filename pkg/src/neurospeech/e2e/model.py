"""Neural encoder + projector + LoRA-adapted decoder LM, trained end to end."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..analysis.alignment import corpus_wer
from ..encoder.model import EncoderModel
from ..encoder.training import AugmentConfig, make_batch
from ..numerics import AdamW, F, Linear, Module, Tensor, clip_grad_norm, no_grad, warmup_cosine
from ..numerics.random import stream
from .aligner import ModalityAligner, contrastive_loss
from .decoder_lm import DecoderConfig, ToyDecoderLM
from .lora import LoraLinear, attach_lora

log = logging.getLogger(__name__)


class ProjectorMLP(Module):
    """Linear -> ReLU -> Linear from the encoder width into the decoder's embedding width."""

    def __init__(self, d_in: int, d_out: int, hidden: int | None = None, seed: int = 0):
        rng = stream(seed, "projector", "init")
        hidden = hidden or d_out
        self.fc1 = Linear(d_in, hidden, rng)
        self.fc2 = Linear(hidden, d_out, rng)
        self.d_in, self.d_out = d_in, d_out

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(x)))


@dataclass
class E2EConfig:
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    projector_hidden: int | None = None
    lora_rank: int = 8
    lora_alpha: float = 32.0
    lora_dropout: float = 0.2
    shared_dim: int = 32
    tau_init: float = 0.1
    contrastive: bool = True
    lm_pretrain_steps: int = 400
    steps: int = 600
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-5
    warmup: int = 50
    grad_clip: float = 1.0
    eval_every: int = 100
    seed: int = 0
    top_p: float = 0.9
    temperature: float = 0.7
    max_new: int = 25
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def to_dict(self) -> dict:
        return asdict(self)


class EndToEndModel(Module):
    def __init__(self, encoder: EncoderModel, lm: ToyDecoderLM, cfg: E2EConfig | None = None, subject: str = "S1"):
        self.cfg = cfg = cfg or E2EConfig()
        self.encoder = encoder
        self.lm = lm
        self.subject = subject
        self.projector = ProjectorMLP(encoder.cfg.embed_dim, lm.dim, cfg.projector_hidden, cfg.seed)
        self.aligner = ModalityAligner(lm.dim, cfg.shared_dim, cfg.tau_init, seed=cfg.seed)
        already = any(isinstance(m, LoraLinear) for m in lm.modules())
        self.adapters = [] if already else attach_lora(lm, lm.blocks, cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout, cfg.seed)

    @property
    def vocab(self):
        return self.lm.vocab

    def neural_tokens(self, patches, lengths=None, rng=None) -> Tensor:
        return self.projector(self.encoder.encode(patches, self.subject, lengths, rng=rng))

    def trainable_parameters(self, contrastive: bool = True) -> list:
        enc = self.encoder
        skip = {id(enc.mask_token), *(id(p) for p in enc.phoneme_head.parameters())}
        params = [p for p in enc.trunk_parameters() if id(p) not in skip]
        io = enc.subject_io(self.subject)
        params += io.in_norm.parameters() + io.in_proj.parameters() + io.out_norm.parameters()
        params += self.projector.parameters()
        params += self.lm.parameters(trainable_only=True)
        if contrastive:
            params += self.aligner.parameters()
        return params

    def build_inputs(self, neural: Tensor, n_lengths, targets: Sequence[Sequence[int]]):
        """Concatenate [neural; prompt; target words] and the CE targets.

        Returns (embeddings, key_mask, ce_targets, ce_weights, text_embeddings,
        text_mask). CE weights are nonzero only where the next token is a
        target word or the closing EOS.
        """
        v = self.vocab
        B, P, _ = neural.shape
        n_prompt = len(v.prompt_ids)
        W = max(len(t) for t in targets)
        tgt = np.full((B, W), v.pad, dtype=np.int64)
        for i, t in enumerate(targets):
            tgt[i, : len(t)] = t
        prompt = self.lm.embed_tokens(np.broadcast_to(np.asarray(v.prompt_ids), (B, n_prompt)))
        text = self.lm.embed_tokens(tgt)
        n_lengths = np.asarray(n_lengths)
        # left-pad the neural tokens so the real ones sit right before the prompt,
        # giving the same relative positions as an unpadded prefix at decode time
        src = np.arange(P)[None, :] - (P - n_lengths)[:, None]
        neural = neural[np.arange(B)[:, None], np.maximum(src, 0)]
        h = F.concat([neural, prompt, text], axis=1)
        L = P + n_prompt + W
        key_mask = np.ones((B, L), dtype=bool)
        key_mask[:, :P] = src >= 0
        text_mask = np.zeros((B, W), dtype=bool)
        ce_t = np.full((B, L), v.pad, dtype=np.int64)
        ce_w = np.zeros((B, L), dtype=np.float32)
        start = P + n_prompt - 1
        for i, t in enumerate(targets):
            text_mask[i, : len(t)] = True
            ce_t[i, start : start + len(t)] = t
            ce_t[i, start + len(t)] = v.eos
            ce_w[i, start : start + len(t) + 1] = 1.0
        key_mask[:, P + n_prompt :] = text_mask
        return h, key_mask, ce_t, ce_w, text, text_mask


def e2e_losses(model: EndToEndModel, trials, rng=None, aug=None, contrastive: bool = True):
    """(ce, contrastive or None, total) for one batch; total = ce + contrastive."""
    x, _, lengths = make_batch(trials, model.encoder.cfg.t_patch, rng, aug)
    neural = model.neural_tokens(x, lengths, rng)
    targets = [model.vocab.encode(t.transcript) for t in trials]
    h, key_mask, ce_t, ce_w, text, text_mask = model.build_inputs(neural, lengths, targets)
    logits = model.lm.forward_embeddings(h, key_mask, rng)
    ce = F.cross_entropy(logits, ce_t, ce_w)
    if not contrastive:
        return ce, None, ce
    neural_mask = np.arange(neural.shape[1])[None, :] < lengths[:, None]
    con = contrastive_loss(neural, text, model.aligner, neural_mask, text_mask)
    return ce, con, ce + con


def e2e_train_step(model: EndToEndModel, trials, opt: AdamW, rng, contrastive: bool = True, aug=None, grad_clip: float = 1.0):
    """One AdamW step on CE (+ contrastive); returns (ce, contrastive) as floats."""
    model.train()
    model.lm.train()
    ce, con, total = e2e_losses(model, trials, rng, aug, contrastive)
    params = model.trainable_parameters(contrastive)
    for p in params:
        p.grad = None
    total.backward()
    if grad_clip:
        clip_grad_norm(params, grad_clip)
    opt.step(params)
    model.aligner.clamp_tau()
    return ce.item(), (con.item() if con is not None else 0.0)


def nucleus_filter(probs: np.ndarray, p: float) -> np.ndarray:
    """Zero all but the smallest top set whose mass reaches ``p``; renormalise."""
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    keep = int(np.searchsorted(cum, p * cum[-1], side="left")) + 1
    out = np.zeros_like(probs)
    out[order[:keep]] = probs[order[:keep]]
    return out / out.sum()


def nucleus_sample(
    lm: ToyDecoderLM,
    prefix: np.ndarray | Tensor,
    rng: np.random.Generator,
    p: float = 0.9,
    temperature: float = 0.7,
    max_new: int = 25,
):
    """Sample word ids after a (L, D) prefix of neural + prompt embeddings.

    Returns (token ids without EOS, per-token log-probs under the untempered
    model). Only words and EOS are eligible.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"top-p must lie in (0, 1], got {p}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    v = lm.vocab
    allowed = v.output_mask()
    prefix = prefix.data if isinstance(prefix, Tensor) else np.asarray(prefix, dtype=np.float32)
    ids, logps = [], []
    lm.eval()
    with no_grad():
        for _ in range(max_new):
            if ids:
                h = np.concatenate([prefix, lm.embed.weight.data[ids]], axis=0)
            else:
                h = prefix
            logits = lm.forward_embeddings(Tensor(h[None])).data[0, -1].astype(np.float64)
            logits = np.where(allowed, logits, -np.inf)
            lp = logits - np.logaddexp.reduce(logits[allowed])
            z = logits / temperature
            probs = np.exp(z - z[allowed].max())
            probs = nucleus_filter(probs / probs.sum(), p)
            tok = int(rng.choice(len(probs), p=probs))
            if tok == v.eos:
                break
            ids.append(tok)
            logps.append(float(lp[tok]))
    return ids, logps


def decode_trials(model: EndToEndModel, trials, seed: int = 0, p=None, temperature=None, max_new=None):
    """Sampled sentences (word lists) and token log-probs per trial, in eval mode."""
    cfg = model.cfg
    p = cfg.top_p if p is None else p
    temperature = cfg.temperature if temperature is None else temperature
    max_new = cfg.max_new if max_new is None else max_new
    model.eval()
    v = model.vocab
    out = []
    with no_grad():
        for i, t in enumerate(trials):
            x, _, lengths = make_batch([t], model.encoder.cfg.t_patch)
            neural = model.neural_tokens(x, lengths).data[0]
            prompt = model.lm.embed.weight.data[v.prompt_ids]
            prefix = np.concatenate([neural, prompt], axis=0)
            ids, lps = nucleus_sample(model.lm, prefix, stream(seed, "sample", i), p, temperature, max_new)
            out.append((v.decode(ids), lps))
    return out


def evaluate_wer(model: EndToEndModel, trials, seed: int = 0) -> float:
    hyps = decode_trials(model, trials, seed)
    return corpus_wer([" ".join(t.transcript) for t in trials], [" ".join(h) for h, _ in hyps])


def train_e2e(model: EndToEndModel, train, val, cfg: E2EConfig | None = None, ctc_initialized: bool = True):
    """CE (+ contrastive) fine-tuning; keeps the weights with the best validation WER."""
    from ..encoder.training import TrainResult

    cfg = cfg or model.cfg
    if not ctc_initialized:
        warnings.warn("encoder was not initialised from a CTC fine-tuned checkpoint", UserWarning, stacklevel=2)
    train = list(train)
    rng = stream(cfg.seed, "e2e")
    params = model.trainable_parameters(cfg.contrastive)
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    res = TrainResult(best_metric=np.inf)
    best = None
    for step in range(cfg.steps):
        opt.lr = warmup_cosine(step, cfg.steps, cfg.lr, cfg.warmup)
        picks = rng.choice(len(train), size=min(cfg.batch_size, len(train)), replace=False)
        ce, con = e2e_train_step(model, [train[i] for i in picks], opt, rng, cfg.contrastive, cfg.augment, cfg.grad_clip)
        entry = {"step": step, "ce": ce, "contrastive": con}
        if val and ((step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps):
            w = evaluate_wer(model, list(val), cfg.seed)
            entry["val_wer"] = w
            if w < res.best_metric:
                res.best_metric, res.best_step = w, step
                best = {k: v.copy() for k, v in model.state_dict().items()}
            log.info("e2e step %d ce %.4f con %.4f val WER %.4f", step, ce, con, w)
        res.history.append(entry)
    if best is not None:
        model.load_state_dict(best)
    model.eval()
    return res
