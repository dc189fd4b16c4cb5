"""Transformer blocks with rotary position embeddings.

Shared by the neural encoder (bidirectional) and the toy decoder LM (causal).
"""

from __future__ import annotations

import numpy as np

from ..numerics import F, LayerNorm, Linear, Module, Tensor
from ..numerics.tensor import custom_op


def rope_angles(positions: np.ndarray, d_head: int, base: float = 10000.0) -> np.ndarray:
    """theta[p, i] = pos_p * base**(-2i/d_head) for i < d_head/2."""
    if d_head % 2:
        raise ValueError(f"rotary embedding needs an even head dimension, got {d_head}")
    inv = base ** (-np.arange(0, d_head, 2) / d_head)
    return np.asarray(positions, dtype=np.float64)[:, None] * inv[None, :]


def _rotate(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope_rotate(x, positions=None, base: float = 10000.0):
    """Rotate consecutive feature pairs of ``x`` (..., T, d_head) by position.

    Accepts a Tensor (differentiable) or a plain array.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    T, d = data.shape[-2], data.shape[-1]
    positions = np.arange(T) if positions is None else positions
    ang = rope_angles(positions, d, base)
    cos, sin = np.cos(ang).astype(data.dtype), np.sin(ang).astype(data.dtype)
    out = _rotate(data, cos, sin)
    if not isinstance(x, Tensor):
        return out
    return custom_op(out, (x,), lambda g: (_rotate(g, cos, -sin),), "rope")


class MultiHeadAttention(Module):
    def __init__(self, dim: int, n_heads: int, rng, head_dim: int | None = None, attn_dropout: float = 0.0):
        self.n_heads = n_heads
        self.head_dim = head_dim or dim // n_heads
        inner = self.n_heads * self.head_dim
        self.q_proj = Linear(dim, inner, rng)
        self.k_proj = Linear(dim, inner, rng)
        self.v_proj = Linear(dim, inner, rng)
        self.o_proj = Linear(inner, dim, rng)
        self.attn_dropout = attn_dropout

    def _heads(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        return F.transpose(F.reshape(x, (B, T, self.n_heads, self.head_dim)), (0, 2, 1, 3))

    def forward(self, x: Tensor, key_mask: np.ndarray | None = None, causal: bool = False, rng=None) -> Tensor:
        B, T, _ = x.shape
        q = rope_rotate(self._heads(self.q_proj(x)))
        k = rope_rotate(self._heads(self.k_proj(x)))
        v = self._heads(self.v_proj(x))
        scores = F.matmul(q, F.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(self.head_dim))
        mask = None
        if key_mask is not None:
            mask = np.asarray(key_mask, dtype=bool)[:, None, None, :]
        if causal:
            tri = np.tril(np.ones((T, T), dtype=bool))[None, None]
            mask = tri if mask is None else (mask & tri)
        att = F.softmax(scores, axis=-1, mask=mask)
        att = F.dropout(att, self.attn_dropout, rng, self.training)
        out = F.matmul(att, v)
        out = F.reshape(F.transpose(out, (0, 2, 1, 3)), (B, T, self.n_heads * self.head_dim))
        return self.o_proj(out)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng, dropout: float = 0.0):
        self.up = Linear(dim, hidden, rng)
        self.down = Linear(hidden, dim, rng)
        self.dropout = dropout

    def forward(self, x: Tensor, rng=None) -> Tensor:
        h = F.dropout(F.gelu(self.up(x)), self.dropout, rng, self.training)
        return self.down(h)


class TransformerBlock(Module):
    """Pre-norm residual block: attention then feed-forward."""

    def __init__(self, dim, n_heads, rng, head_dim=None, ffn_mult=4, dropout=0.0, attn_dropout=0.0):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, n_heads, rng, head_dim, attn_dropout)
        self.ln2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult * dim, rng, dropout)
        self.dropout = dropout

    def forward(self, x: Tensor, key_mask=None, causal=False, rng=None) -> Tensor:
        h = self.attn(self.ln1(x), key_mask=key_mask, causal=causal, rng=rng)
        x = x + F.dropout(h, self.dropout, rng, self.training)
        h = self.ffn(self.ln2(x), rng=rng)
        return x + F.dropout(h, self.dropout, rng, self.training)
