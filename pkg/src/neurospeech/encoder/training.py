"""Masked-reconstruction pretraining and CTC fine-tuning loops."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import ctc
from ..numerics import F, AdamW, Tensor, clip_grad_norm, no_grad, warmup_cosine
from ..numerics.random import stream
from ..synthdata.preprocess import augment
from ..synthdata.simulate import Trial
from .model import EncoderModel, patchify, sample_mask

log = logging.getLogger(__name__)


@dataclass
class AugmentConfig:
    noise_std: float = 0.2
    offset_std: float = 0.05
    smooth_sigma: float = 2.0
    enabled: bool = True


@dataclass
class TrainConfig:
    steps: int = 600
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-5
    warmup: int = 50
    grad_clip: float = 1.0
    eval_every: int = 100
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class MaskConfig:
    mask_ratio: float = 0.5
    max_span: int = 15


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_metric: float = float("nan")
    best_step: int = -1
    skipped: int = 0


def make_batch(trials: Sequence[Trial], t_patch: int, rng=None, aug: AugmentConfig | None = None):
    """Pad patchified trials to a common length.

    Returns (inputs, targets, lengths); ``inputs`` are augmented when ``aug``
    is enabled and an rng is given, ``targets`` never are.
    """
    targets = [patchify(t.features, t_patch) for t in trials]
    if aug is not None and aug.enabled and rng is not None:
        inputs = [
            patchify(augment(t.features, rng, aug.noise_std, aug.offset_std, aug.smooth_sigma), t_patch)
            for t in trials
        ]
    else:
        inputs = targets
    lengths = np.array([p.shape[0] for p in targets])
    P, W = int(lengths.max()), targets[0].shape[1]
    x = np.zeros((len(trials), P, W), dtype=np.float32)
    y = np.zeros_like(x)
    for i, (a, b) in enumerate(zip(inputs, targets)):
        x[i, : len(a)] = a
        y[i, : len(b)] = b
    return x, y, lengths


def masked_mse(pred: Tensor, target: np.ndarray, select: np.ndarray) -> Tensor:
    """Mean squared error over the patches flagged in ``select`` (B, P)."""
    w = np.broadcast_to(select[..., None], target.shape).astype(pred.dtype)
    n = max(float(w.sum()), 1.0)
    diff = pred - Tensor(target)
    return (diff * diff * w).sum() * (1.0 / n)


def reconstruction_r2(pred: np.ndarray, target: np.ndarray, select: np.ndarray | None = None) -> float:
    """1 - SS_res / SS_tot pooled over the selected entries.

    Returns 0.0 with a RuntimeWarning when the target has no variance there.
    """
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if select is not None:
        sel = np.broadcast_to(np.asarray(select, dtype=bool)[..., None], target.shape) if select.ndim < target.ndim else select
        pred, target = pred[sel], target[sel]
    ss_tot = ((target - target.mean()) ** 2).sum()
    if ss_tot == 0:
        warnings.warn("zero target variance; R^2 undefined, returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(1.0 - ((pred - target) ** 2).sum() / ss_tot)


def _batch_masks(lengths, P, mcfg: MaskConfig, rng) -> np.ndarray:
    mask = np.zeros((len(lengths), P), dtype=bool)
    for i, n in enumerate(lengths):
        mask[i, :n] = sample_mask(int(n), mcfg.mask_ratio, mcfg.max_span, rng)[0]
    return mask


def pretrain_step(model: EncoderModel, trials, subject: str, mcfg: MaskConfig, opt: AdamW, rng, aug=None, grad_clip=1.0):
    """One masked-reconstruction AdamW step; returns the loss."""
    model.train()
    x, y, lengths = make_batch(trials, model.cfg.t_patch, rng, aug)
    mask = _batch_masks(lengths, x.shape[1], mcfg, rng)
    valid = np.arange(x.shape[1])[None, :] < lengths[:, None]
    latents = model.encode(x, subject, lengths, mask=mask, rng=rng)
    pred = model.reconstruct(latents, subject)
    select = mask if mask.any() else valid
    loss = masked_mse(pred, y, select)
    params = [p for p in model.trunk_parameters() if p is not model.mask_token]
    params = [p for p in params if not any(p is q for q in model.phoneme_head.parameters())]
    params += model.subject_parameters(subject)
    if mask.any():
        params.append(model.mask_token)
    for p in params:
        p.grad = None
    loss.backward()
    if grad_clip:
        clip_grad_norm(params, grad_clip)
    opt.step(params)
    return loss.item()


def evaluate_r2(model: EncoderModel, trials, subject: str, mcfg: MaskConfig, seed: int = 0, batch_size: int = 64) -> float:
    model.eval()
    rng = stream(seed, "val-mask")
    preds, targets = [], []
    with no_grad():
        for i in range(0, len(trials), batch_size):
            chunk = trials[i : i + batch_size]
            x, y, lengths = make_batch(chunk, model.cfg.t_patch)
            mask = _batch_masks(lengths, x.shape[1], mcfg, rng)
            valid = np.arange(x.shape[1])[None, :] < lengths[:, None]
            sel = mask if mask.any() else valid
            pred = model.reconstruct(model.encode(x, subject, lengths, mask=mask), subject).data
            preds.append(pred[sel])
            targets.append(y[sel])
    return reconstruction_r2(np.concatenate(preds), np.concatenate(targets))


def _sample(n, k, rng):
    return rng.choice(n, size=min(k, n), replace=False)


def pretrain(
    model: EncoderModel,
    train: Sequence[Trial],
    val: Sequence[Trial],
    subject: str = "S1",
    cfg: TrainConfig | None = None,
    mcfg: MaskConfig | None = None,
) -> TrainResult:
    """Self-supervised pretraining; keeps the weights with the best validation R^2."""
    cfg = cfg or TrainConfig()
    mcfg = mcfg or MaskConfig()
    train = list(train)
    rng = stream(cfg.seed, "pretrain")
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    res = TrainResult(best_metric=-np.inf)
    best_state = None
    for step in range(cfg.steps):
        opt.lr = warmup_cosine(step, cfg.steps, cfg.lr, cfg.warmup)
        batch = [train[i] for i in _sample(len(train), cfg.batch_size, rng)]
        loss = pretrain_step(model, batch, subject, mcfg, opt, rng, cfg.augment, cfg.grad_clip)
        entry = {"step": step, "loss": loss}
        if val and ((step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps):
            r2 = evaluate_r2(model, list(val), subject, mcfg, cfg.seed)
            entry["val_r2"] = r2
            if r2 > res.best_metric:
                res.best_metric, res.best_step = r2, step
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
            log.info("pretrain step %d loss %.4f val R2 %.4f", step, loss, r2)
        res.history.append(entry)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return res


def ctc_feasible(trial: Trial, t_patch: int) -> bool:
    return ctc.min_frames(trial.phonemes) <= trial.n_bins // t_patch


def ctc_step(model: EncoderModel, trials, subject: str, opt: AdamW, rng, aug=None, grad_clip=1.0) -> float:
    model.train()
    x, _, lengths = make_batch(trials, model.cfg.t_patch, rng, aug)
    logits = model(x, subject, lengths, rng=rng)
    loss = ctc.ctc_loss(F.log_softmax(logits, axis=-1), [t.phonemes for t in trials], lengths)
    params = [p for p in model.trunk_parameters() if p is not model.mask_token]
    io = model.subject_io(subject)
    params += io.in_norm.parameters() + io.in_proj.parameters() + io.out_norm.parameters()
    for p in params:
        p.grad = None
    loss.backward()
    if grad_clip:
        clip_grad_norm(params, grad_clip)
    opt.step(params)
    return loss.item()


def predict_log_probs(model: EncoderModel, trials: Sequence[Trial], subject: str = "S1", batch_size: int = 64):
    """Per-trial (P_i, 41) log-probabilities in eval mode."""
    model.eval()
    out = []
    with no_grad():
        for i in range(0, len(trials), batch_size):
            chunk = trials[i : i + batch_size]
            x, _, lengths = make_batch(chunk, model.cfg.t_patch)
            lp = F.log_softmax(model(x, subject, lengths), axis=-1).data
            out += [lp[j, : lengths[j]].astype(np.float64) for j in range(len(chunk))]
    return out


def evaluate_per(model: EncoderModel, trials, subject: str = "S1") -> float:
    lps = predict_log_probs(model, trials, subject)
    return ctc.corpus_per([t.phonemes for t in trials], [ctc.greedy_decode(lp) for lp in lps])


def finetune_ctc(
    model: EncoderModel,
    train: Sequence[Trial],
    val: Sequence[Trial],
    subject: str = "S1",
    cfg: TrainConfig | None = None,
) -> TrainResult:
    """CTC fine-tuning of the trunk and phoneme head; keeps the best validation PER."""
    cfg = cfg or TrainConfig()
    usable = [t for t in train if ctc_feasible(t, model.cfg.t_patch)]
    res = TrainResult(best_metric=np.inf, skipped=len(train) - len(usable))
    if res.skipped:
        log.warning("skipping %d trials too short for their label sequence", res.skipped)
    if not usable:
        raise ValueError("no trial is long enough for CTC training")
    rng = stream(cfg.seed, "ctc")
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    best_state = None
    for step in range(cfg.steps):
        opt.lr = warmup_cosine(step, cfg.steps, cfg.lr, cfg.warmup)
        batch = [usable[i] for i in _sample(len(usable), cfg.batch_size, rng)]
        loss = ctc_step(model, batch, subject, opt, rng, cfg.augment, cfg.grad_clip)
        entry = {"step": step, "loss": loss}
        if val and ((step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps):
            p = evaluate_per(model, list(val), subject)
            entry["val_per"] = p
            if p < res.best_metric:
                res.best_metric, res.best_step = p, step
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
            log.info("ctc step %d loss %.4f val PER %.4f", step, loss, p)
        res.history.append(entry)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return res
