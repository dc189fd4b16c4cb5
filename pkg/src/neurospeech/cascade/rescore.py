"""N-best rescoring and the ranked-candidate file format."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .search import Candidate

CANDIDATE_COLUMNS = ("sentence", "acoustic_score", "lm_score", "combined_score")


def dedupe(nbest: Iterable[Candidate]) -> list[Candidate]:
    """Drop repeated sentences, keeping the first (highest-ranked) copy."""
    seen, out = set(), []
    for c in nbest:
        if c.sentence not in seen:
            seen.add(c.sentence)
            out.append(c)
    return out


def rescore_scores(nbest: Sequence[Candidate], neural_lm: Callable[[Sequence[str]], float], alpha: float, acoustic_scale: float) -> list[float]:
    return [alpha * neural_lm(c.words) + (1.0 - alpha) * c.lm + acoustic_scale * c.acoustic for c in nbest]


def rescore(
    nbest: Sequence[Candidate],
    neural_lm: Callable[[Sequence[str]], float] | None,
    alpha: float = 0.55,
    acoustic_scale: float = 0.325,
) -> Candidate:
    """Pick the candidate maximising alpha*neural + (1-alpha)*ngram + acoustic_scale*acoustic.

    Ties go to the earlier candidate. With ``alpha == 0`` the neural LM is
    never called.
    """
    nbest = dedupe(nbest)
    if not nbest:
        raise ValueError("cannot rescore an empty n-best list")
    if len(nbest) == 1:
        return nbest[0]
    scorer = neural_lm if alpha > 0 and neural_lm is not None else (lambda words: 0.0)
    scores = rescore_scores(nbest, scorer, alpha, acoustic_scale)
    best = max(range(len(nbest)), key=lambda i: (scores[i], -i))
    return nbest[best]


def write_candidates(path, nbest: Sequence[Candidate]) -> None:
    """Tab-separated ranked candidates with a header row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(CANDIDATE_COLUMNS)
        for c in nbest:
            w.writerow([c.sentence, repr(float(c.acoustic)), repr(float(c.lm)), repr(float(c.combined))])


def read_candidates(path) -> list[Candidate]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or tuple(rows[0]) != CANDIDATE_COLUMNS:
        raise ValueError(f"{path}: missing candidate header")
    return [Candidate(tuple(r[0].split()), float(r[1]), float(r[2]), float(r[3])) for r in rows[1:]]
