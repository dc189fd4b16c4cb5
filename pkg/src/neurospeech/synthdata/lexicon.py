"""Pronunciation lexicon over the 39 ARPAbet phonemes."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping

from ..ctc import PHONEMES, VOCAB


@dataclass
class Lexicon:
    words: list[str]
    pronunciations: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.words:
            raise ValueError("lexicon is empty")
        inventory = set(PHONEMES)
        for w in self.words:
            pron = self.pronunciations.get(w)
            if not pron:
                raise ValueError(f"word {w!r} has no pronunciation")
            bad = [p for p in pron if p not in inventory]
            if bad:
                raise ValueError(f"word {w!r}: phonemes {bad} not in the ARPAbet inventory")
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate words in lexicon")

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.pronunciations

    def phoneme_ids(self, word: str) -> list[int]:
        return VOCAB.encode(self.pronunciations[word])

    def digest(self) -> str:
        h = hashlib.sha256()
        for w in self.words:
            h.update((w + " " + " ".join(self.pronunciations[w]) + "\n").encode())
        return h.hexdigest()[:16]

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Iterable[str]]) -> "Lexicon":
        return cls(list(mapping), {w: list(p) for w, p in mapping.items()})

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Lexicon":
        mapping = {}
        for line in lines:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            word, *pron = line.split()
            mapping[word.lower()] = [p.upper() for p in pron]
        return cls.from_mapping(mapping)

    @classmethod
    def default(cls) -> "Lexicon":
        text = resources.files("neurospeech.data").joinpath("lexicon_50.txt").read_text()
        return cls.from_lines(text.splitlines())
