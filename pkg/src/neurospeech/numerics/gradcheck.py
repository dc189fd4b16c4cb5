"""Finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-3,
    n_samples: int = 50,
    seed: int = 0,
    float64: bool = True,
) -> float:
    """Max relative error between backprop and central differences.

    The error at one coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``. ``fn``
    must be deterministic (put modules in eval mode). With ``float64`` the
    parameters are promoted for the duration of the check so that the
    difference quotient is not swamped by float32 rounding.
    """
    originals = [p.data for p in params]
    saved_grads = [p.grad for p in params]
    try:
        for p in params:
            p.data = np.array(p.data, dtype=np.float64 if float64 else p.data.dtype, order="C")
        for p in params:
            p.grad = None
        loss = fn()
        loss.backward()
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

        sizes = np.array([p.data.size for p in params])
        total = int(sizes.sum())
        rng = np.random.default_rng(seed)
        picks = rng.choice(total, size=min(n_samples, total), replace=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        worst = 0.0
        for flat in picks:
            which = int(np.searchsorted(offsets, flat, side="right") - 1)
            p = params[which]
            j = int(flat - offsets[which])
            view = p.data.reshape(-1)
            old = view[j]
            view[j] = old + eps
            up = float(fn().data)
            view[j] = old - eps
            down = float(fn().data)
            view[j] = old
            numeric = (up - down) / (2 * eps)
            a = float(analytic[which].reshape(-1)[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
        return worst
    finally:
        for p, data, g in zip(params, originals, saved_grads):
            p.data = data
            p.grad = g
