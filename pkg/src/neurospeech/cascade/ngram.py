"""Word n-gram language model with interpolated absolute discounting."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"


class NGramLM:
    """Interpolated absolute-discount n-gram model over a closed vocabulary.

    ``p(w | h) = max(c(h w) - D, 0) / c(h) + D * N1+(h .) / c(h) * p(w | h')``
    where ``h'`` drops the oldest word of ``h``. An unseen context defers to
    its shorter context with weight 1, and the unigram level interpolates with
    a uniform distribution so every vocabulary word keeps nonzero mass.
    Log-probabilities are natural logs.
    """

    def __init__(self, order: int, discount: float, vocab: Sequence[str], counts: dict):
        self.order = order
        self.discount = discount
        self.vocab = tuple(vocab)
        self._vocab_set = frozenset(self.vocab)
        self._counts = counts  # context tuple -> Counter(next word)
        self._totals = {h: sum(c.values()) for h, c in counts.items()}
        self._cache: dict[tuple, float] = {}

    def __contains__(self, word: str) -> bool:
        return word in self._vocab_set

    def _prob(self, word: str, context: tuple) -> float:
        if not context:
            c = self._counts.get((), Counter())
            total = self._totals.get((), 0)
            uniform = 1.0 / len(self.vocab)
            if total == 0:
                return uniform
            return max(c[word] - self.discount, 0.0) / total + self.discount * len(c) / total * uniform
        lower = self._prob(word, context[1:])
        total = self._totals.get(context, 0)
        if total == 0:
            return lower
        c = self._counts[context]
        return max(c[word] - self.discount, 0.0) / total + self.discount * len(c) / total * lower

    def backoff_weight(self, context: Sequence[str]) -> float:
        """Mass handed to the shorter context (1.0 for an unseen context)."""
        context = tuple(context)[-(self.order - 1) :] if self.order > 1 else ()
        total = self._totals.get(context, 0)
        if total == 0:
            return 1.0
        return self.discount * len(self._counts[context]) / total

    def prob(self, word: str, context: Sequence[str] = ()) -> float:
        if word not in self._vocab_set:
            raise KeyError(f"{word!r} is not in the LM vocabulary")
        context = tuple(context)[-(self.order - 1) :] if self.order > 1 else ()
        return self._prob(word, context)

    def logprob(self, word: str, context: Sequence[str] = ()) -> float:
        key = (word, tuple(context)[-(self.order - 1) :] if self.order > 1 else ())
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = math.log(self.prob(word, key[1]))
        return hit

    def next_logprob(self, words: Sequence[str], word: str) -> float:
        """log p(word | <s> words)."""
        return self.logprob(word, (BOS, *words))

    def sentence_logprob(self, words: Sequence[str], eos: bool = True) -> float:
        history = [BOS]
        total = 0.0
        for w in list(words) + ([EOS] if eos else []):
            total += self.logprob(w, history)
            history.append(w)
        return total


def train_ngram(
    corpus: Iterable[Sequence[str] | str],
    n: int = 5,
    discount: float = 0.5,
    vocabulary: Iterable[str] | None = None,
) -> NGramLM:
    """Count n-grams of ``corpus`` (sentences as word lists or strings).

    Every word seen in the corpus or listed in ``vocabulary`` is in the model's
    vocabulary, plus the end marker; the start marker only appears as context.
    """
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    if not 0.0 < discount < 1.0:
        raise ValueError(f"discount must be in (0, 1), got {discount}")
    sentences = [s.split() if isinstance(s, str) else list(s) for s in corpus]
    if not sentences:
        raise ValueError("cannot train an n-gram model on an empty corpus")
    counts: dict[tuple, Counter] = defaultdict(Counter)
    vocab = set(vocabulary or ())
    for words in sentences:
        vocab.update(words)
        tokens = [BOS, *words, EOS]
        for i in range(1, len(tokens)):
            for k in range(0, min(n - 1, i) + 1):
                counts[tuple(tokens[i - k : i])][tokens[i]] += 1
    vocab.discard(BOS)
    vocab.add(EOS)
    return NGramLM(n, discount, sorted(vocab), dict(counts))
