"""Time-patch transformer encoder with subject-specific read-in/read-out."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..ctc import N_CLASSES
from ..numerics import F, LayerNorm, Linear, Module, Parameter, Tensor
from ..numerics.random import stream
from .transformer import TransformerBlock


@dataclass
class PatchConfig:
    channels: int = 128
    t_patch: int = 5
    embed_dim: int = 64
    n_heads: int = 4
    depth: int = 3
    head_dim: int | None = None
    ffn_mult: int = 4
    dropout: float = 0.2
    attn_dropout: float = 0.4

    def __post_init__(self):
        if self.t_patch < 1:
            raise ValueError("t_patch must be >= 1")
        if self.head_dim is None and self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by n_heads {self.n_heads}")
        if self.resolved_head_dim % 2:
            raise ValueError("head dimension must be even for rotary embeddings")

    @property
    def resolved_head_dim(self) -> int:
        return self.head_dim or self.embed_dim // self.n_heads

    @property
    def patch_dim(self) -> int:
        return self.channels * self.t_patch

    @classmethod
    def full_scale(cls, channels: int = 512) -> "PatchConfig":
        """Full-size preset (384-wide, 6 heads, depth 7)."""
        return cls(channels=channels, embed_dim=384, n_heads=6, depth=7, dropout=0.2, attn_dropout=0.4)

    def to_dict(self) -> dict:
        return asdict(self)


def patchify(features: np.ndarray, t_patch: int) -> np.ndarray:
    """(T, C) -> (T // t_patch, C * t_patch); trailing bins are dropped."""
    features = np.asarray(features)
    T, C = features.shape
    if T < t_patch:
        raise ValueError(f"{T} time bins is shorter than one patch of {t_patch}")
    n = T // t_patch
    return features[: n * t_patch].reshape(n, t_patch * C)


def unpatchify(patches: np.ndarray, t_patch: int) -> np.ndarray:
    n, width = patches.shape
    return patches.reshape(n * t_patch, width // t_patch)


def n_masked(ratio: float, n_patches: int) -> int:
    """round-half-up of ratio * n_patches."""
    return int(np.floor(ratio * n_patches + 0.5))


def sample_mask(n_patches: int, ratio: float, max_span: int, rng: np.random.Generator):
    """Boolean mask with exactly ``n_masked(ratio, n)`` True entries, plus the spans.

    Span lengths are uniform on [1, max_span]; each span lands uniformly on
    free positions, away from earlier spans when there is room, and the last
    span is truncated to hit the target count.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio {ratio} outside [0, 1]")
    if max_span < 1:
        raise ValueError("max_span must be >= 1")
    target = n_masked(ratio, n_patches)
    mask = np.zeros(n_patches, dtype=bool)
    spans = []
    count = 0
    while count < target:
        length = min(int(rng.integers(1, max_span + 1)), target - count)
        while True:
            free = ~mask
            # windows fully free, with a free (or edge) cell on both sides
            ok = []
            for s in range(n_patches - length + 1):
                if not free[s : s + length].all():
                    continue
                left = s == 0 or free[s - 1]
                right = s + length == n_patches or free[s + length]
                ok.append((s, left and right))
            isolated = [s for s, iso in ok if iso]
            choices = isolated or [s for s, _ in ok]
            if choices:
                break
            length -= 1
        start = int(choices[int(rng.integers(len(choices)))])
        mask[start : start + length] = True
        spans.append((start, length))
        count += length
    return mask, spans


class SubjectIO(Module):
    """LayerNorm -> Linear -> LayerNorm read-in and a linear read-out."""

    def __init__(self, patch_dim: int, dim: int, rng):
        self.in_norm = LayerNorm(patch_dim)
        self.in_proj = Linear(patch_dim, dim, rng)
        self.out_norm = LayerNorm(dim)
        self.readout = Linear(dim, patch_dim, rng)

    def embed(self, patches: Tensor) -> Tensor:
        return self.out_norm(self.in_proj(self.in_norm(patches)))


class EncoderModel(Module):
    def __init__(self, cfg: PatchConfig, seed: int = 0, subjects=("S1",)):
        self.cfg = cfg
        self.seed = seed
        rng = stream(seed, "encoder", "init")
        D = cfg.embed_dim
        self.subjects: dict[str, SubjectIO] = {}
        self.mask_token = Parameter(rng.normal(0.0, 0.02, size=D).astype(np.float32))
        self.blocks = [
            TransformerBlock(D, cfg.n_heads, rng, cfg.head_dim, cfg.ffn_mult, cfg.dropout, cfg.attn_dropout)
            for _ in range(cfg.depth)
        ]
        self.final_norm = LayerNorm(D)
        self.phoneme_head = Linear(D, N_CLASSES, rng)
        for s in subjects:
            self.register_subject(s)

    def register_subject(self, name: str, channels: int | None = None) -> SubjectIO:
        channels = self.cfg.channels if channels is None else channels
        rng = stream(self.seed, "encoder", "subject", name)
        io = SubjectIO(channels * self.cfg.t_patch, self.cfg.embed_dim, rng)
        self.subjects[name] = io
        return io

    def subject_io(self, subject: str) -> SubjectIO:
        try:
            return self.subjects[subject]
        except KeyError:
            raise KeyError(f"unknown subject {subject!r}; registered: {sorted(self.subjects)}") from None

    def trunk_parameters(self) -> list[Parameter]:
        out = [self.mask_token, *self.final_norm.parameters(), *self.phoneme_head.parameters()]
        for b in self.blocks:
            out += b.parameters()
        return out

    def subject_parameters(self, subject: str) -> list[Parameter]:
        return self.subject_io(subject).parameters()

    def encode(self, patches, subject: str, lengths=None, mask: np.ndarray | None = None, rng=None) -> Tensor:
        """Latents (B, P, D) for padded patches (B, P, C*t_patch).

        ``mask`` (B, P) marks patch embeddings to swap for the mask token
        before the transformer stack.
        """
        io = self.subject_io(subject)
        x = patches if isinstance(patches, Tensor) else Tensor(np.asarray(patches, dtype=np.float32))
        if x.ndim == 2:
            x = F.reshape(x, (1,) + x.shape)
        B, P, _ = x.shape
        h = io.embed(x)
        if mask is not None and np.any(mask):
            h = F.where(np.asarray(mask, dtype=bool)[..., None], self.mask_token, h)
        key_mask = None
        if lengths is not None:
            key_mask = np.arange(P)[None, :] < np.asarray(lengths)[:, None]
        for block in self.blocks:
            h = block(h, key_mask=key_mask, rng=rng)
        return self.final_norm(h)

    def reconstruct(self, latents: Tensor, subject: str) -> Tensor:
        return self.subject_io(subject).readout(latents)

    def phoneme_logits(self, latents: Tensor) -> Tensor:
        return self.phoneme_head(latents)

    def forward(self, patches, subject: str, lengths=None, rng=None) -> Tensor:
        return self.phoneme_logits(self.encode(patches, subject, lengths, rng=rng))
