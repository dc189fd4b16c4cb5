"""Phoneme vocabulary, CTC loss, best-path decoding and phoneme error rate."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .analysis.alignment import levenshtein
from .numerics.tensor import Tensor, custom_op

PHONEMES = (
    "AA AE AH AO AW AY B CH D DH EH ER EY F G HH IH IY JH K L M N NG "
    "OW OY P R S SH T TH UH UW V W Y Z ZH"
).split()
SIL = "SIL"
BLANK_SYMBOL = "<blank>"
SIL_ID = len(PHONEMES)  # 39
BLANK = SIL_ID + 1  # 40
N_CLASSES = BLANK + 1  # 41


class PhonemeVocab:
    """The 41 CTC classes: 39 ARPAbet phonemes, silence, blank."""

    symbols: tuple[str, ...] = tuple(PHONEMES) + (SIL, BLANK_SYMBOL)

    def __init__(self):
        self._index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def blank(self) -> int:
        return BLANK

    @property
    def silence(self) -> int:
        return SIL_ID

    def encode(self, symbols: Sequence[str]) -> list[int]:
        try:
            return [self._index[s.upper() if s != BLANK_SYMBOL else s] for s in symbols]
        except KeyError as exc:
            raise KeyError(f"unknown phoneme {exc.args[0]!r}") from None

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.symbols[i] for i in ids]


VOCAB = PhonemeVocab()


def min_frames(labels: Sequence[int]) -> int:
    """Shortest input length that can emit ``labels`` under CTC."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _extend(labels: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def ctc_forward(log_probs: np.ndarray, labels: Sequence[int], blank: int = BLANK) -> float:
    """log p(labels | log_probs) for a single T x K item, by the forward recursion."""
    lp = np.asarray(log_probs, dtype=np.float64)
    labels = list(labels)
    if lp.shape[0] < min_frames(labels):
        return -np.inf
    ext = _extend(labels, blank)
    S = len(ext)
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    alpha = np.full(S, -np.inf)
    alpha[0] = lp[0, blank]
    if S > 1:
        alpha[1] = lp[0, ext[1]]
    for t in range(1, lp.shape[0]):
        prev = alpha
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha = a + lp[t, ext]
    return float(np.logaddexp(alpha[-1], alpha[-2]) if S > 1 else alpha[-1])


def _lattice(lp: np.ndarray, labels: list[list[int]], lengths: np.ndarray, blank: int):
    """Batched alpha/beta over the blank-augmented lattice (float64, log space)."""
    B, T, _ = lp.shape
    L = max((len(lab) for lab in labels), default=0)
    S = 2 * L + 1
    ext = np.full((B, S), blank, dtype=np.int64)
    s_len = np.zeros(B, dtype=np.int64)
    for b, lab in enumerate(labels):
        ext[b, 1 : 2 * len(lab) : 2] = lab
        s_len[b] = 2 * len(lab) + 1
    skip = np.zeros((B, S), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    valid = np.arange(S)[None, :] < s_len[:, None]
    emit = np.take_along_axis(lp, np.broadcast_to(ext[:, None, :], (B, T, S)), axis=2)  # B,T,S
    rows = np.arange(B)

    alpha = np.full((B, T, S), -np.inf)
    alpha[:, 0, 0] = emit[:, 0, 0]
    alpha[:, 0, 1:2] = np.where(s_len[:, None] > 1, emit[:, 0, 1:2], -np.inf) if S > 1 else alpha[:, 0, 1:2]
    for t in range(1, T):
        prev = alpha[:, t - 1]
        a = prev.copy()
        a[:, 1:] = np.logaddexp(a[:, 1:], prev[:, :-1])
        a[:, 2:] = np.where(skip[:, 2:], np.logaddexp(a[:, 2:], prev[:, :-2]), a[:, 2:])
        a = np.where(valid, a + emit[:, t], -np.inf)
        alpha[:, t] = np.where((t < lengths)[:, None], a, prev)

    last = alpha[rows, lengths - 1]
    end1 = last[rows, s_len - 1]
    end2 = np.where(s_len > 1, last[rows, np.maximum(s_len - 2, 0)], -np.inf)
    loglik = np.logaddexp(end1, end2)

    beta = np.full((B, T, S), -np.inf)
    skip_next = np.zeros((B, S), dtype=bool)
    skip_next[:, :-2] = skip[:, 2:]
    for t in range(T - 1, -1, -1):
        init = np.full((B, S), -np.inf)
        init[rows, s_len - 1] = 0.0
        has2 = s_len > 1
        init[rows[has2], s_len[has2] - 2] = 0.0
        if t == T - 1:
            rec = np.full((B, S), -np.inf)
        else:
            nb = beta[:, t + 1] + emit[:, t + 1]
            rec = nb.copy()
            rec[:, :-1] = np.logaddexp(rec[:, :-1], nb[:, 1:])
            rec[:, :-2] = np.where(skip_next[:, :-2], np.logaddexp(rec[:, :-2], nb[:, 2:]), rec[:, :-2])
            rec = np.where(valid, rec, -np.inf)
        beta[:, t] = np.where((t == lengths - 1)[:, None], init, np.where((t < lengths - 1)[:, None], rec, -np.inf))
    return ext, alpha, beta, loglik


def ctc_loss(
    log_probs: Tensor,
    labels: Sequence[Sequence[int]],
    input_lengths: Sequence[int] | None = None,
    blank: int = BLANK,
) -> Tensor:
    """Mean over the batch of -log p(labels | log_probs).

    ``log_probs`` has shape (B, T, K). The gradient with respect to
    ``log_probs`` comes from the alpha/beta lattice directly.
    """
    lp_t = log_probs if isinstance(log_probs, Tensor) else Tensor(log_probs)
    lp = lp_t.data.astype(np.float64)
    if lp.ndim == 2:
        raise ValueError("ctc_loss expects a batch of shape (B, T, K)")
    B, T, K = lp.shape
    labels = [list(map(int, lab)) for lab in labels]
    if len(labels) != B:
        raise ValueError(f"{len(labels)} label sequences for a batch of {B}")
    lengths = np.full(B, T, dtype=np.int64) if input_lengths is None else np.asarray(input_lengths, dtype=np.int64)
    for b, lab in enumerate(labels):
        if blank in lab:
            raise ValueError(f"item {b}: labels contain the blank index {blank}")
        if lengths[b] < 1 or lengths[b] > T:
            raise ValueError(f"item {b}: input length {lengths[b]} outside [1, {T}]")
        need = min_frames(lab)
        if need > lengths[b]:
            raise ValueError(f"item {b}: {len(lab)} labels need {need} frames but only {lengths[b]} available")
    ext, alpha, beta, loglik = _lattice(lp, labels, lengths, blank)
    loss = float(-loglik.mean())

    def backward(g):
        post = np.exp(alpha + beta - loglik[:, None, None])  # B,T,S occupation
        grad = np.zeros((B, T, K))
        bi = np.broadcast_to(np.arange(B)[:, None, None], post.shape)
        ti = np.broadcast_to(np.arange(T)[None, :, None], post.shape)
        ki = np.broadcast_to(ext[:, None, :], post.shape)
        np.add.at(grad, (bi, ti, ki), post)
        grad *= -float(g) / B
        return (grad.astype(lp_t.dtype),)

    return custom_op(np.asarray(loss, dtype=lp_t.dtype), (lp_t,), backward, "ctc_loss")


def collapse(path: Sequence[int], blank: int = BLANK) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for tok in path:
        tok = int(tok)
        if tok != prev and tok != blank:
            out.append(tok)
        prev = tok
    return out


def greedy_decode(log_probs, blank: int = BLANK) -> list[int]:
    """Best-path decoding; ``argmax`` breaks ties toward the lowest index."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return collapse(np.argmax(lp, axis=-1), blank)


def forced_align(log_probs: np.ndarray, labels: Sequence[int], blank: int = BLANK) -> np.ndarray:
    """Viterbi alignment: for each frame the index into ``labels`` it emits, or -1 for blank."""
    lp = np.asarray(log_probs, dtype=np.float64)
    labels = list(labels)
    ext = _extend(labels, blank)
    T, S = lp.shape[0], len(ext)
    if T < min_frames(labels):
        raise ValueError(f"{len(labels)} labels cannot be aligned to {T} frames")
    score = np.full((T, S), -np.inf)
    back = np.zeros((T, S), dtype=np.int64)
    score[0, 0] = lp[0, ext[0]]
    if S > 1:
        score[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            cands = [(score[t - 1, s], s)]
            if s >= 1:
                cands.append((score[t - 1, s - 1], s - 1))
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                cands.append((score[t - 1, s - 2], s - 2))
            best, arg = max(cands, key=lambda c: c[0])
            score[t, s] = best + lp[t, ext[s]]
            back[t, s] = arg
    s = S - 1 if S == 1 or score[T - 1, S - 1] >= score[T - 1, S - 2] else S - 2
    states = np.zeros(T, dtype=np.int64)
    for t in range(T - 1, -1, -1):
        states[t] = s
        s = back[t, s]
    return np.where(states % 2 == 1, (states - 1) // 2, -1)


def per(ref: Sequence[int], hyp: Sequence[int]) -> float:
    """Phoneme error rate: edit distance over reference length (may exceed 1)."""
    if len(ref) == 0:
        raise ValueError("reference phoneme sequence is empty")
    return levenshtein(list(ref), list(hyp)) / len(ref)


def corpus_per(refs, hyps) -> float:
    errs = total = 0
    for r, h in zip(refs, hyps):
        errs += levenshtein(list(r), list(h))
        total += len(r)
    if total == 0:
        raise ValueError("no reference phonemes")
    return errs / total
