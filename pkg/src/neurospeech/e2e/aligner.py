"""Modality aligner and the symmetric InfoNCE objective."""

from __future__ import annotations

import numpy as np

from ..numerics import F, Linear, Module, Parameter, Tensor
from ..numerics.random import stream


def masked_mean(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean over axis 1 of (B, L, D), counting only positions where ``mask`` is True."""
    if mask is None:
        return F.mean(x, axis=1)
    w = np.asarray(mask, dtype=x.dtype)
    counts = np.maximum(w.sum(axis=1, keepdims=True), 1.0)
    return F.tsum(x * Tensor(w[..., None]), axis=1) * Tensor(1.0 / counts)


class ModalityAligner(Module):
    """Separate linear maps from the text width into a shared space, then L2 normalisation.

    ``tau`` divides the similarities; it starts at ``tau_init`` and is kept in
    ``[tau_min, tau_max]`` by :meth:`clamp_tau` after each update.
    """

    def __init__(self, dim: int, shared: int = 32, tau_init: float = 0.1, tau_max: float = 100.0, tau_min: float = 0.01, seed: int = 0):
        if not tau_min <= tau_init <= tau_max:
            raise ValueError("tau_init outside [tau_min, tau_max]")
        rng = stream(seed, "aligner", "init")
        self.neural_proj = Linear(dim, shared, rng)
        self.text_proj = Linear(dim, shared, rng)
        self.tau = Parameter(np.array([tau_init], dtype=np.float32))
        self.tau_min, self.tau_max = tau_min, tau_max

    def clamp_tau(self) -> None:
        np.clip(self.tau.data, self.tau_min, self.tau_max, out=self.tau.data)

    def forward(self, neural_pooled: Tensor, text_pooled: Tensor):
        zs = F.l2_normalize(self.neural_proj(neural_pooled), axis=-1)
        zt = F.l2_normalize(self.text_proj(text_pooled), axis=-1)
        return zs, zt


def info_nce(zs: Tensor, zt: Tensor, tau) -> Tensor:
    """Symmetric InfoNCE over a batch of matched rows of ``zs`` and ``zt``.

    The mean of the neural->text and text->neural cross-entropies with the
    diagonal as the positive class, similarities divided by ``tau``.
    """
    zs, zt = F.as_tensor(zs), F.as_tensor(zt)
    if zs.ndim != 2 or zs.shape != zt.shape:
        raise ValueError(f"expected matching (B, P) batches, got {zs.shape} and {zt.shape}")
    B = zs.shape[0]
    if B < 2:
        raise ValueError("contrastive loss needs a batch of at least 2 (no negatives otherwise)")
    tau = tau if isinstance(tau, Tensor) else Tensor(np.asarray([tau], dtype=zs.dtype))
    logits = F.matmul(zs, F.transpose(zt, None)) / tau
    diag = np.arange(B)
    return (F.cross_entropy(logits, diag) + F.cross_entropy(F.transpose(logits, None), diag)) * 0.5


def contrastive_loss(neural_tokens: Tensor, text_tokens: Tensor, aligner: ModalityAligner, neural_mask=None, text_mask=None) -> Tensor:
    """Mean-pool both token sequences, align them and score with :func:`info_nce`."""
    if neural_tokens.shape[0] < 2:
        raise ValueError("contrastive loss needs a batch of at least 2 (no negatives otherwise)")
    zs, zt = aligner(masked_mean(neural_tokens, neural_mask), masked_mean(text_tokens, text_mask))
    return info_nce(zs, zt, aligner.tau)
