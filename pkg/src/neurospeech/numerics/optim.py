"""AdamW with decoupled weight decay, plus small training helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Parameter


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: Sequence[Parameter], state: AdamWState) -> None:
    """One in-place AdamW update: p <- p - lr*(m_hat/(sqrt(v_hat)+eps) + wd*p)."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise RuntimeError(f"parameter {i} with shape {p.shape} has no gradient")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p in params:
        key = id(p)
        g = p.grad
        if key not in state.m:
            state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        m, v = state.m[key], state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps) + state.weight_decay * p.data
        p.data = (p.data - state.lr * update).astype(p.dtype, copy=False)


class AdamW:
    """Stateful wrapper binding a parameter list to an :class:`AdamWState`."""

    def __init__(self, params: Sequence[Parameter], lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.state = AdamWState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, params: Sequence[Parameter] | None = None) -> None:
        """Update ``params`` (default: all bound params).

        Moments are keyed per parameter, so stepping a subset leaves the
        others' state untouched.
        """
        adamw_step(self.params if params is None else params, self.state)


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


def warmup_cosine(step: int, total: int, base_lr: float, warmup: int = 0, floor: float = 0.1) -> float:
    if warmup and step < warmup:
        return base_lr * (step + 1) / warmup
    frac = min(1.0, (step - warmup) / max(1, total - warmup))
    return base_lr * (floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * frac)))
