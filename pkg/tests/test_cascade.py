import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurospeech.cascade import (
    Candidate,
    DecodeParams,
    beam_search,
    best_alignment,
    read_candidates,
    rescore,
    train_ngram,
    write_candidates,
)
from neurospeech.cascade.ngram import BOS, EOS
from neurospeech.ctc import BLANK, SIL_ID, VOCAB
from neurospeech.synthdata import Lexicon
from oracles import SATURATE, exhaustive_decode, tiny_decode_instance

def test_bigram_hand_computed():
    lm = train_ngram(["a b"], n=2, discount=0.5)
    assert set(lm.vocab) == {"a", "b", EOS}
    # unigram: each of a, b, </s> seen once out of 3 -> (1 - D)/3 + D * 3/3 * 1/3 = 1/3
    assert lm.prob("b") == pytest.approx(1 / 3)
    # p(b|a) = (1 - D)/1 + D * 1/1 * p(b)
    assert lm.prob("b", ["a"]) == pytest.approx(0.5 + 0.5 / 3)


def test_unseen_context_backs_off():
    lm = train_ngram(["a b c", "b c a", "c c"], n=3, discount=0.4)
    for w in lm.vocab:
        assert lm.prob(w, ["zz", "a"]) == pytest.approx(lm.prob(w, ["a"]))
    # seen context, unseen continuation: only the backoff share of the lower order
    assert lm.prob(EOS, ["a", "b"]) == pytest.approx(lm.backoff_weight(["a", "b"]) * lm.prob(EOS, ["b"]))


@settings(max_examples=40, deadline=None)
@given(
    corpus=st.lists(st.lists(st.sampled_from("abcde"), min_size=1, max_size=6), min_size=1, max_size=8),
    n=st.integers(1, 5),
    discount=st.floats(0.05, 0.95),
    context=st.lists(st.sampled_from(list("abcdef") + [BOS]), max_size=5),
)
def test_ngram_normalises(corpus, n, discount, context):
    lm = train_ngram(corpus, n=n, discount=discount, vocabulary="abcdef")
    probs = [lm.prob(w, context) for w in lm.vocab]
    assert math.isclose(sum(probs), 1.0, abs_tol=1e-6)
    assert min(probs) > 0


def test_ngram_errors_and_determinism():
    with pytest.raises(ValueError):
        train_ngram(["a"], n=0)
    with pytest.raises(ValueError):
        train_ngram([], n=2)
    a, b = train_ngram(["x y", "y x"], 3), train_ngram(["x y", "y x"], 3)
    assert a.sentence_logprob(["x", "y"]) == b.sentence_logprob(["x", "y"])


def _one_hot_lp(labels_per_frame, floor=-12.0):
    lp = np.full((len(labels_per_frame), 41), floor)
    for t, k in enumerate(labels_per_frame):
        lp[t, k] = 0.0
    return lp - np.logaddexp.reduce(lp, axis=1, keepdims=True)


def test_go_versus_no():
    lex = Lexicon.from_mapping({"go": ["G", "OW"], "no": ["N", "OW"]})
    lm = train_ngram([["go"], ["no"]], n=2)
    g, ow = VOCAB.encode(["G", "OW"])
    lp = _one_hot_lp([SIL_ID, g, g, ow, BLANK, SIL_ID])
    top = beam_search(lp, lex, lm, DecodeParams(beam_size=10, n_best=2))[0]
    assert top.words == ("go",)


def test_beam_matches_exhaustive_search():
    rng = np.random.default_rng(2024)
    for _ in range(120):
        lp, prons, lex, lm, params = tiny_decode_instance(rng)
        best, score, _ = exhaustive_decode(lp, prons, lm, params.acoustic_scale, params.blank_penalty_nats, BLANK, SIL_ID)
        out = beam_search(lp, lex, lm, params)
        if best is None:
            assert out == []
            continue
        top = out[0]
        assert top.words == best
        assert top.combined == pytest.approx(score, abs=1e-5)


def test_acoustic_bookkeeping():
    rng = np.random.default_rng(7)
    for _ in range(30):
        lp, prons, lex, lm, params = tiny_decode_instance(rng)
        for cand in beam_search(lp, lex, lm, params):
            _, _, every = exhaustive_decode(lp, prons, lm, params.acoustic_scale, params.blank_penalty_nats, BLANK, SIL_ID)
            ac = (every[cand.words] - lm.sentence_logprob(cand.words)) / params.acoustic_scale
            assert cand.acoustic == pytest.approx(ac, abs=1e-5)
            assert cand.lm == pytest.approx(lm.sentence_logprob(cand.words), abs=1e-9)
            assert cand.combined == pytest.approx(params.acoustic_scale * cand.acoustic + cand.lm, abs=1e-9)


def test_zero_acoustic_scale_is_lm_ranking():
    rng = np.random.default_rng(3)
    lp, prons, lex, lm, _ = tiny_decode_instance(rng)
    params = DecodeParams(beam_size=SATURATE, n_best=50, acoustic_scale=0.0)
    out = beam_search(lp, lex, lm, params)
    scores = [lm.sentence_logprob(c.words) for c in out]
    assert scores == sorted(scores, reverse=True)


def test_determinism_and_errors():
    rng = np.random.default_rng(4)
    lp, _, lex, lm, params = tiny_decode_instance(rng)
    assert beam_search(lp, lex, lm, params) == beam_search(lp, lex, lm, params)
    with pytest.raises(ValueError):
        DecodeParams(rescore_alpha=1.5)
    with pytest.raises(ValueError):
        DecodeParams(beam_size=0)


def test_blank_penalty_units():
    assert DecodeParams(blank_penalty=90).blank_penalty_nats == pytest.approx(9.0)
    assert DecodeParams(blank_penalty=90, penalty_units="decibel").blank_penalty_nats == pytest.approx(9 * math.log(10))


def test_blank_penalty_reduces_blanks():
    rng = np.random.default_rng(11)
    lex = Lexicon.from_mapping({"go": ["G", "OW"], "no": ["N", "OW"], "oh": ["OW"]})
    lm = train_ngram([["go", "no"], ["oh"], ["no", "go", "oh"]], n=2)
    for _ in range(10):
        lp = rng.normal(size=(10, 41)) * 2
        lp -= np.logaddexp.reduce(lp, axis=1, keepdims=True)
        counts = []
        for pen in (0.0, 10.0, 30.0, 90.0):
            params = DecodeParams(beam_size=50, blank_penalty=pen)
            top = beam_search(lp, lex, lm, params)[0]
            _, path, _ = best_alignment(lp, top.words, lex, params)
            counts.append(int((path < 0).sum()))
        assert counts == sorted(counts, reverse=True)


def _cands():
    return [
        Candidate(("a",), -1.0, -2.0, -2.325),
        Candidate(("b",), -1.5, -2.2, -2.6875),
        Candidate(("c",), -3.0, -2.0, -2.975),
    ]


def test_rescore_degenerate_cases():
    cands = _cands()
    assert rescore(cands, None, alpha=0.0) is cands[0]
    assert rescore(cands[:1], lambda w: 0.0, alpha=1.0) is cands[0]
    fav = {("b",): 0.0, ("a",): -50.0, ("c",): -50.0}
    assert rescore(cands, fav.__getitem__, alpha=1.0).words == ("b",)


def test_rescore_tie_keeps_first_and_dedupes():
    a = Candidate(("x",), 0.0, 0.0, 0.0)
    b = Candidate(("y",), 0.0, 0.0, 0.0)
    assert rescore([a, b], lambda w: 0.0, 0.5) is a
    assert rescore([a, Candidate(("x",), 5.0, 5.0, 5.0), b], lambda w: 0.0, 0.5) is a


def test_candidate_file_roundtrip(tmp_path):
    p = tmp_path / "cands.tsv"
    write_candidates(p, _cands())
    assert p.read_text().splitlines()[0] == "sentence\tacoustic_score\tlm_score\tcombined_score"
    assert read_candidates(p) == _cands()
