"""Low-rank adapters for frozen linear layers."""

from __future__ import annotations

import numpy as np

from ..numerics import F, Linear, Module, Parameter, Tensor
from ..numerics.random import stream


class LoraLinear(Module):
    """``base(x) + scale * B A dropout(x)`` with ``base`` frozen and ``B`` zero-initialised."""

    def __init__(self, base: Linear, r: int = 8, alpha: float = 32.0, dropout: float = 0.2, rng=None, dropout_rng=None):
        if r < 1:
            raise ValueError("LoRA rank must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.base = base
        for p in base.parameters():
            p.requires_grad = False
        bound = 1.0 / np.sqrt(base.d_in)
        self.lora_a = Parameter(rng.uniform(-bound, bound, size=(r, base.d_in)).astype(np.float32))
        self.lora_b = Parameter(np.zeros((base.d_out, r), dtype=np.float32))
        self.r = r
        self.scale = alpha / r
        self.dropout = dropout
        self.dropout_rng = dropout_rng
        self.d_in, self.d_out = base.d_in, base.d_out

    def forward(self, x: Tensor) -> Tensor:
        y = self.base(x)
        if self.scale == 0:
            return y
        h = F.dropout(x, self.dropout, self.dropout_rng, self.training)
        delta = F.matmul(F.matmul(h, F.transpose(self.lora_a, None)), F.transpose(self.lora_b, None))
        return y + delta * self.scale

    def merged_weight(self) -> np.ndarray:
        return self.base.weight.data + self.scale * (self.lora_b.data @ self.lora_a.data)


ATTN_TARGETS = ("q_proj", "k_proj", "v_proj", "o_proj")
FFN_TARGETS = ("up", "down")


def attach_lora(model: Module, blocks, r: int = 8, alpha: float = 32.0, dropout: float = 0.2, seed: int = 0) -> list[LoraLinear]:
    """Freeze every parameter of ``model`` and wrap the attention and feed-forward
    projections of ``blocks`` in adapters. Returns the adapters in order."""
    for p in model.parameters():
        p.requires_grad = False
    adapters = []
    for i, block in enumerate(blocks):
        for owner, names in ((block.attn, ATTN_TARGETS), (block.ffn, FFN_TARGETS)):
            for name in names:
                base = getattr(owner, name)
                if isinstance(base, LoraLinear):
                    raise ValueError(f"block {i}.{name} already has an adapter")
                ad = LoraLinear(
                    base, r, alpha, dropout,
                    rng=stream(seed, "lora", "init", i, name),
                    dropout_rng=stream(seed, "lora", "dropout", i, name),
                )
                setattr(owner, name, ad)
                adapters.append(ad)
    return adapters


def lora_parameter_count(adapters) -> int:
    return sum(a.r * (a.d_in + a.d_out) for a in adapters)
