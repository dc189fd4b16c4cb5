"""Lexicon-constrained CTC prefix beam search with n-gram fusion."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..ctc import BLANK, SIL_ID, forced_align
from ..synthdata.lexicon import Lexicon
from .ngram import EOS, NGramLM

NEG_INF = -math.inf
PENALTY_UNITS = ("nats_per_10", "decibel")


def _lse(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@dataclass
class DecodeParams:
    """Search and rescoring knobs.

    ``penalty_units`` picks how ``blank_penalty`` maps to natural-log units:
    ``"nats_per_10"`` subtracts ``blank_penalty / 10`` and ``"decibel"``
    subtracts ``blank_penalty * ln(10) / 10`` from every blank log-prob.
    """

    beam_size: int = 100
    acoustic_scale: float = 0.325
    blank_penalty: float = 90.0
    penalty_units: str = "nats_per_10"
    rescore_alpha: float = 0.55
    n_best: int = 10
    optional_silence: bool = True

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 0.0 <= self.rescore_alpha <= 1.0:
            raise ValueError(f"rescore_alpha must lie in [0, 1], got {self.rescore_alpha}")
        if not 1 <= self.n_best <= self.beam_size:
            raise ValueError(f"n_best must be in [1, beam_size], got {self.n_best}")
        if self.penalty_units not in PENALTY_UNITS:
            raise ValueError(f"penalty_units must be one of {PENALTY_UNITS}")

    @property
    def blank_penalty_nats(self) -> float:
        if self.penalty_units == "decibel":
            return self.blank_penalty * math.log(10.0) / 10.0
        return self.blank_penalty / 10.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Candidate:
    words: tuple[str, ...]
    acoustic: float
    lm: float
    combined: float

    @property
    def sentence(self) -> str:
        return " ".join(self.words)


class _Node:
    __slots__ = ("children", "words")

    def __init__(self):
        self.children: dict[int, _Node] = {}
        self.words: list[str] = []


class PhonemeTrie:
    """Prefix tree over pronunciations; terminal nodes list their words."""

    def __init__(self, lexicon: Lexicon):
        if len(lexicon) == 0:
            raise ValueError("lexicon is empty")
        self.root = _Node()
        self.words = tuple(lexicon.words)
        for w in lexicon.words:
            node = self.root
            for p in lexicon.phoneme_ids(w):
                node = node.children.setdefault(p, _Node())
            node.words.append(w)


def penalize_blank(log_probs: np.ndarray, params: DecodeParams) -> np.ndarray:
    lp = np.array(log_probs, dtype=np.float64)
    lp[:, BLANK] -= params.blank_penalty_nats
    return lp


def beam_search(log_probs: np.ndarray, lexicon: Lexicon, lm: NGramLM, params: DecodeParams | None = None) -> list[Candidate]:
    """Ranked n-best sentences for one trial's (T, 41) CTC log-probs.

    Hypotheses are keyed by (words, trie node, last label) and carry separate
    blank-ending and label-ending log-masses, so every alignment of the same
    label history is summed. A word's n-gram log-prob is added the frame its
    last phoneme is emitted. Pruning and final ranking both use
    ``acoustic_scale * acoustic + lm``. ``acoustic`` is the CTC log-mass under
    the blank-penalised log-probs.
    """
    params = params or DecodeParams()
    if lm is None or len(lm.vocab) == 0:
        raise ValueError("language model is empty")
    trie = lexicon if isinstance(lexicon, PhonemeTrie) else PhonemeTrie(lexicon)
    missing = [w for w in trie.words if w not in lm]
    if missing:
        raise ValueError(f"lexicon words missing from the LM vocabulary: {missing[:5]}")
    lp = penalize_blank(log_probs, params)
    if lp.ndim != 2 or lp.shape[0] == 0:
        raise ValueError(f"expected (T, classes) log-probs, got shape {lp.shape}")
    scale = params.acoustic_scale
    root = trie.root

    # key -> [p_blank, p_label, lm]
    beams: dict[tuple, list] = {((), id(root), -1): [0.0, NEG_INF, 0.0]}
    nodes = {id(root): root}

    for t in range(lp.shape[0]):
        row = lp[t]
        nxt: dict[tuple, list] = {}

        def add(key, pb, pnb, lm_score):
            entry = nxt.get(key)
            if entry is None:
                nxt[key] = [pb, pnb, lm_score]
            else:
                entry[0] = _lse(entry[0], pb)
                entry[1] = _lse(entry[1], pnb)

        for key, (pb, pnb, lm_score) in beams.items():
            words, node_id, last = key
            total = _lse(pb, pnb)
            add(key, total + row[BLANK], NEG_INF, lm_score)
            if last >= 0:
                add(key, NEG_INF, pnb + row[last], lm_score)
            node = nodes[node_id]
            at_root = node is root
            if at_root and params.optional_silence and last != SIL_ID:
                add((words, id(root), SIL_ID), NEG_INF, total + row[SIL_ID], lm_score)
            for ph, child in node.children.items():
                prev = pb if ph == last else total
                if prev == NEG_INF:
                    continue
                score = prev + row[ph]
                if child.children:
                    nodes.setdefault(id(child), child)
                    add((words, id(child), ph), NEG_INF, score, lm_score)
                for w in child.words:
                    add((words + (w,), id(root), ph), NEG_INF, score, lm_score + lm.next_logprob(words, w))

        ranked = sorted(nxt.items(), key=lambda kv: scale * _lse(kv[1][0], kv[1][1]) + kv[1][2], reverse=True)
        beams = dict(ranked[: params.beam_size])

    finals: dict[tuple, list] = {}
    for (words, node_id, _), (pb, pnb, lm_score) in beams.items():
        if node_id != id(root) or not words:
            continue
        ac = _lse(pb, pnb)
        if ac == NEG_INF:
            continue
        if words in finals:
            finals[words][0] = _lse(finals[words][0], ac)
        else:
            finals[words] = [ac, lm_score + lm.next_logprob(words, EOS)]
    out = [Candidate(w, ac, lms, scale * ac + lms) for w, (ac, lms) in finals.items()]
    out.sort(key=lambda c: c.combined, reverse=True)
    return out[: params.n_best]


def label_variants(words: Sequence[str], lexicon: Lexicon, optional_silence: bool = True):
    """Every label sequence a word string may be aligned to (silence optional at boundaries)."""
    prons = [lexicon.phoneme_ids(w) for w in words]
    slots = len(prons) + 1
    if not optional_silence:
        yield [p for pron in prons for p in pron]
        return
    for bits in range(1 << slots):
        seq = []
        for i in range(slots):
            if bits >> i & 1:
                seq.append(SIL_ID)
            if i < len(prons):
                seq.extend(prons[i])
        yield seq


def best_alignment(log_probs: np.ndarray, words: Sequence[str], lexicon: Lexicon, params: DecodeParams | None = None):
    """Viterbi (labels, frame path, score) for ``words`` under the penalised log-probs.

    The frame path holds a label index per frame or -1 for blank.
    """
    params = params or DecodeParams()
    lp = penalize_blank(log_probs, params)
    best = None
    for labels in label_variants(words, lexicon, params.optional_silence):
        try:
            path = forced_align(lp, labels)
        except ValueError:
            continue
        toks = np.where(path >= 0, np.asarray(labels)[np.maximum(path, 0)], BLANK)
        score = float(lp[np.arange(len(path)), toks].sum())
        if best is None or score > best[2]:
            best = (labels, path, score)
    if best is None:
        raise ValueError(f"{' '.join(words)!r} cannot be aligned to {lp.shape[0]} frames")
    return best
