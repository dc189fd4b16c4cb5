"""Cascaded sentence decoding: n-gram LM, lexicon beam search, n-best rescoring."""

from .ngram import BOS, EOS, NGramLM, train_ngram
from .rescore import CANDIDATE_COLUMNS, dedupe, read_candidates, rescore, write_candidates
from .search import Candidate, DecodeParams, PhonemeTrie, beam_search, best_alignment, label_variants, penalize_blank

__all__ = [
    "BOS",
    "EOS",
    "NGramLM",
    "train_ngram",
    "Candidate",
    "DecodeParams",
    "PhonemeTrie",
    "beam_search",
    "best_alignment",
    "label_variants",
    "penalize_blank",
    "rescore",
    "dedupe",
    "write_candidates",
    "read_candidates",
    "CANDIDATE_COLUMNS",
]
