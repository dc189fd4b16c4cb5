"""Word-level token vocabulary for the toy decoder LM."""

from __future__ import annotations

from typing import Sequence

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
PROMPT_TEXT = "decode the above neural activity into an English sentence:"


def prompt_tokens(text: str = PROMPT_TEXT) -> list[str]:
    """One special token per prompt word."""
    return [f"<p:{w.lower()}>" for w in text.split()]


class TokenVocab:
    """PAD, BOS, EOS, the prompt tokens, then the lexicon words in order."""

    def __init__(self, words: Sequence[str], prompt: str = PROMPT_TEXT):
        self.prompt = prompt_tokens(prompt)
        self.words = list(words)
        self.tokens = [PAD, BOS, EOS, *self.prompt, *self.words]
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad, self.bos, self.eos = 0, 1, 2
        self.prompt_ids = [self.index[t] for t in self.prompt]
        self.word_offset = 3 + len(self.prompt)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: Sequence[str]) -> list[int]:
        try:
            return [self.index[w] for w in words]
        except KeyError as exc:
            raise KeyError(f"word {exc.args[0]!r} is not in the decoder vocabulary") from None

    def decode(self, ids: Sequence[int]) -> list[str]:
        out = []
        for i in ids:
            if i == self.eos:
                break
            if i >= self.word_offset:
                out.append(self.tokens[i])
        return out

    def output_mask(self):
        """Tokens the decoder may generate: the words and EOS."""
        import numpy as np

        mask = np.zeros(len(self), dtype=bool)
        mask[self.word_offset :] = True
        mask[self.eos] = True
        return mask
