"""A small causal transformer LM over word tokens."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..encoder.transformer import TransformerBlock
from ..numerics import AdamW, Embedding, F, LayerNorm, Linear, Module, Tensor, clip_grad_norm, no_grad, warmup_cosine
from ..numerics.random import stream
from .vocab import TokenVocab

log = logging.getLogger(__name__)


@dataclass
class DecoderConfig:
    dim: int = 64
    depth: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)


class ToyDecoderLM(Module):
    def __init__(self, vocab: TokenVocab, cfg: DecoderConfig | None = None, seed: int = 0):
        self.vocab = vocab
        self.cfg = cfg = cfg or DecoderConfig()
        rng = stream(seed, "decoder", "init")
        self.embed = Embedding(len(vocab), cfg.dim, rng)
        self.blocks = [
            TransformerBlock(cfg.dim, cfg.n_heads, rng, None, cfg.ffn_mult, cfg.dropout, 0.0) for _ in range(cfg.depth)
        ]
        self.final_norm = LayerNorm(cfg.dim)
        self.head = Linear(cfg.dim, len(vocab), rng)
        self.dropout_rng = stream(seed, "decoder", "dropout")

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def embed_tokens(self, ids) -> Tensor:
        return self.embed(np.asarray(ids, dtype=np.int64))

    def forward_embeddings(self, h: Tensor, key_mask: np.ndarray | None = None, rng=None) -> Tensor:
        """Logits (B, L, V) for input embeddings (B, L, D) under a causal mask."""
        rng = rng if rng is not None else self.dropout_rng
        for block in self.blocks:
            h = block(h, key_mask=key_mask, causal=True, rng=rng)
        return self.head(self.final_norm(h))

    def forward(self, ids, key_mask=None, rng=None) -> Tensor:
        return self.forward_embeddings(self.embed_tokens(ids), key_mask, rng)

    # ---------------------------------------------------------------- text-only
    def text_batch(self, sentences: Sequence[Sequence[str]]):
        """[prompt; words] inputs with next-token targets ending in EOS."""
        v = self.vocab
        seqs = [v.prompt_ids + v.encode(s) for s in sentences]
        L = max(len(s) for s in seqs)
        ids = np.full((len(seqs), L), v.pad, dtype=np.int64)
        targets = np.full_like(ids, v.pad)
        weights = np.zeros(ids.shape, dtype=np.float32)
        n_prompt = len(v.prompt_ids)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
            targets[i, : len(s) - 1] = s[1:]
            targets[i, len(s) - 1] = v.eos
            weights[i, n_prompt - 1 : len(s)] = 1.0
        key_mask = ids != v.pad
        return ids, targets, weights, key_mask

    def sentence_logprob(self, words: Sequence[str]) -> float:
        """log p(words, EOS | prompt) in natural-log units."""
        ids, targets, weights, key_mask = self.text_batch([list(words)])
        was_training = self.training
        self.eval()
        with no_grad():
            lp = F.log_softmax(self(ids, key_mask), axis=-1).data[0]
        self.train(was_training)
        picked = lp[np.arange(ids.shape[1]), targets[0]]
        return float((picked * weights[0]).sum())



def pretrain_lm(
    lm: ToyDecoderLM,
    corpus: Sequence[Sequence[str]],
    steps: int = 400,
    batch_size: int = 32,
    lr: float = 3e-3,
    seed: int = 0,
) -> list[float]:
    """Next-word CE on [prompt; sentence; EOS] sequences; returns the loss curve."""
    corpus = [list(s) for s in corpus]
    if not corpus:
        raise ValueError("empty LM corpus")
    rng = stream(seed, "decoder", "pretrain")
    params = lm.parameters(trainable_only=True)
    opt = AdamW(params, lr=lr, weight_decay=0.01)
    lm.train()
    losses = []
    for step in range(steps):
        opt.lr = warmup_cosine(step, steps, lr, min(20, steps // 10))
        picks = rng.choice(len(corpus), size=min(batch_size, len(corpus)), replace=False)
        ids, targets, weights, key_mask = lm.text_batch([corpus[i] for i in picks])
        loss = F.cross_entropy(lm(ids, key_mask, rng), targets, weights)
        for p in params:
            p.grad = None
        loss.backward()
        clip_grad_norm(params, 1.0)
        opt.step(params)
        losses.append(loss.item())
    lm.eval()
    log.info("decoder LM pretrain: loss %.3f -> %.3f", losses[0], np.mean(losses[-10:]))
    return losses
