"""Dense tensor math, reverse-mode autodiff and AdamW."""

from . import tensor as F
from .gradcheck import grad_check
from .nn import Embedding, LayerNorm, Linear, Module
from .optim import AdamW, AdamWState, adamw_step, clip_grad_norm, warmup_cosine
from .random import derive_seed, stream
from .tensor import NonFiniteError, Parameter, ShapeError, Tensor, no_grad

__all__ = [
    "F",
    "Tensor",
    "Parameter",
    "ShapeError",
    "NonFiniteError",
    "no_grad",
    "Module",
    "Linear",
    "LayerNorm",
    "Embedding",
    "AdamW",
    "AdamWState",
    "adamw_step",
    "clip_grad_norm",
    "warmup_cosine",
    "grad_check",
    "stream",
    "derive_seed",
]
