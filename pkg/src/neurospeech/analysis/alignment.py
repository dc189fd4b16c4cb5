"""Levenshtein alignment, error rates and confusion matrices."""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

NULL = None

MATCH, SUB, DEL, INS = "match", "substitute", "delete", "insert"


def levenshtein(ref: Sequence, hyp: Sequence) -> int:
    """Unit-cost edit distance."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def normalize_text(text: str) -> list[str]:
    """Lowercase, drop punctuation (apostrophes kept), split on whitespace."""
    text = text.lower()
    text = re.sub(f"[{re.escape(string.punctuation.replace(chr(39), ''))}]", " ", text)
    return text.split()


def _as_words(x) -> list[str]:
    if isinstance(x, str):
        return normalize_text(x)
    return normalize_text(" ".join(x))


def wer(ref_words, hyp_words) -> float:
    """Word error rate; strings are normalised, word lists are joined first."""
    ref, hyp = _as_words(ref_words), _as_words(hyp_words)
    if not ref:
        raise ValueError("reference transcript is empty")
    return levenshtein(ref, hyp) / len(ref)


def corpus_wer(refs: Iterable, hyps: Iterable) -> float:
    """Total edits over total reference words."""
    errs = total = 0
    for r, h in zip(refs, hyps):
        r, h = _as_words(r), _as_words(h)
        errs += levenshtein(r, h)
        total += len(r)
    if total == 0:
        raise ValueError("no reference words")
    return errs / total


@dataclass
class AlignmentTrace:
    ops: list[tuple[str, Hashable | None, Hashable | None]] = field(default_factory=list)

    def ref(self) -> list:
        return [r for _, r, _ in self.ops if r is not NULL]

    def hyp(self) -> list:
        return [h for _, _, h in self.ops if h is not NULL]

    @property
    def cost(self) -> int:
        return sum(op != MATCH for op, _, _ in self.ops)

    def counts(self) -> Counter:
        return Counter(op for op, _, _ in self.ops)

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)


def align_sequences(ref: Sequence, hyp: Sequence) -> AlignmentTrace:
    """One minimum-cost alignment.

    Ties are broken match > substitute > delete > insert, read from the end
    of both sequences backwards.
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]))
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and d[i, j] == d[i - 1, j - 1]:
            ops.append((MATCH, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + 1:
            ops.append((SUB, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            ops.append((DEL, ref[i - 1], NULL))
            i -= 1
        else:
            ops.append((INS, NULL, hyp[j - 1]))
            j -= 1
    ops.reverse()
    return AlignmentTrace(ops)


@dataclass
class ConfusionMatrix:
    """Counts indexed [ref token, hyp token]; the NULL label sits last."""

    labels: list
    counts: np.ndarray

    def index(self, token) -> int:
        return self.labels.index(token)

    def off_diagonal_total(self) -> int:
        return int(self.counts.sum() - np.trace(self.counts))

    def error_totals(self) -> np.ndarray:
        """Per-label off-diagonal errors, row plus column."""
        off = self.counts.copy()
        np.fill_diagonal(off, 0)
        return off.sum(axis=0) + off.sum(axis=1)

    def reorder(self, order: str = "alphabetical") -> "ConfusionMatrix":
        body = [k for k, lab in enumerate(self.labels) if lab is not NULL]
        if order == "alphabetical":
            body.sort(key=lambda k: str(self.labels[k]))
        elif order == "error":
            tot = self.error_totals()
            body.sort(key=lambda k: (-tot[k], str(self.labels[k])))
        else:
            raise ValueError(f"unknown ordering {order!r}; use 'alphabetical' or 'error'")
        idx = body + [len(self.labels) - 1]
        return ConfusionMatrix([self.labels[k] for k in idx], self.counts[np.ix_(idx, idx)])

    def to_rows(self) -> list[list]:
        names = ["<null>" if lab is NULL else str(lab) for lab in self.labels]
        rows = [["ref\\hyp"] + names]
        for name, row in zip(names, self.counts):
            rows.append([name] + [int(c) for c in row])
        return rows


def confusion_matrix(traces: Iterable[AlignmentTrace], min_count: int = 1, vocabulary=None) -> ConfusionMatrix:
    """Aggregate traces; when ``min_count > 1`` rarer error cells are zeroed."""
    traces = list(traces)
    if vocabulary is None:
        toks = {t for tr in traces for _, r, h in tr for t in (r, h) if t is not NULL}
        vocabulary = sorted(toks, key=str)
    labels = list(vocabulary) + [NULL]
    pos = {lab: k for k, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for tr in traces:
        for _, r, h in tr:
            counts[pos[r], pos[h]] += 1
    if min_count > 1:
        off = ~np.eye(len(labels), dtype=bool)
        counts[off & (counts < min_count)] = 0
    return ConfusionMatrix(labels, counts)
