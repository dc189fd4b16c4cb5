import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurospeech import ctc
from neurospeech.analysis.alignment import (
    DEL,
    INS,
    MATCH,
    NULL,
    SUB,
    align_sequences,
    confusion_matrix,
    corpus_wer,
    normalize_text,
    wer,
)
from neurospeech.analysis.interpret import (
    lda_axis,
    pca_project,
    rdm,
    rsa_score,
    segment_sizes,
    segmented_pool,
    word_distance,
    word_embeddings,
)
from neurospeech.analysis.report import scatter_svg, write_confusion_csv
from oracles import brute_edit_distance


def test_wer_examples():
    assert wer("the cat sat", "the cat sat") == 0.0
    assert wer("the cat sat", "the bat") == pytest.approx(2 / 3)
    assert wer("a", "a b c") == 2.0
    assert wer("Hello, World!", "hello world") == 0.0
    with pytest.raises(ValueError):
        wer("", "a")
    assert normalize_text("Don't  stop.") == ["don't", "stop"]


def test_corpus_wer_pools_words():
    assert corpus_wer(["a b", "c d e f"], ["a", "c d e f"]) == pytest.approx(1 / 6)


def test_metrics_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        ref = [int(x) for x in rng.integers(0, 10, size=rng.integers(1, 9))]
        hyp = [int(x) for x in rng.integers(0, 10, size=rng.integers(0, 9))]
        d = brute_edit_distance(ref, hyp)
        assert ctc.per(ref, hyp) == d / len(ref)
        assert wer([str(x) for x in ref], [str(x) for x in hyp]) == d / len(ref)
        tr = align_sequences(ref, hyp)
        assert tr.cost == d
        assert tr.ref() == ref and tr.hyp() == hyp


def test_alignment_tie_break():
    tr = align_sequences(["a", "b"], ["b"])
    assert tr.ops == [(DEL, "a", NULL), (MATCH, "b", "b")]
    assert all(op == MATCH for op, _, _ in align_sequences(list("xyz"), list("xyz")))
    assert align_sequences(["a"], ["c"]).ops == [(SUB, "a", "c")]
    assert align_sequences([], ["c"]).ops == [(INS, NULL, "c")]


@settings(max_examples=80, deadline=None)
@given(ref=st.lists(st.sampled_from("abcd"), max_size=7), hyp=st.lists(st.sampled_from("abcd"), max_size=7))
def test_confusion_totals(ref, hyp):
    tr = align_sequences(ref, hyp)
    cm = confusion_matrix([tr])
    c = tr.counts()
    assert cm.off_diagonal_total() == c[SUB] + c[INS] + c[DEL]
    assert (cm.counts >= 0).all()
    # each reference token's row counts its matches and errors
    for tok in set(ref):
        assert cm.counts[cm.index(tok)].sum() == ref.count(tok)


def test_confusion_min_count_and_ordering(tmp_path):
    traces = [align_sequences(list("ab"), list("ac")), align_sequences(list("ab"), list("ac")), align_sequences(list("d"), list("e"))]
    cm = confusion_matrix(traces, min_count=2)
    assert cm.counts[cm.index("b"), cm.index("c")] == 2
    assert cm.counts[cm.index("d"), cm.index("e")] == 0
    assert cm.counts[cm.index("a"), cm.index("a")] == 2
    assert confusion_matrix([align_sequences(list("ab"), list("ab"))]).off_diagonal_total() == 0
    ordered = confusion_matrix(traces).reorder("error")
    assert ordered.labels[0] in ("b", "c") and ordered.labels[-1] is NULL
    with pytest.raises(ValueError):
        cm.reorder("size")
    write_confusion_csv(tmp_path / "cm.csv", ordered)
    assert (tmp_path / "cm.csv").read_text().startswith("ref\\hyp,")


def test_segment_remainder_rule():
    assert segment_sizes(23) == [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]
    for L in range(10, 61):
        sizes = segment_sizes(L)
        assert sum(sizes) == L and max(sizes) - min(sizes) <= 1
        assert sizes == sorted(sizes, reverse=True)
    x = np.arange(10 * 3, dtype=float).reshape(10, 3)
    np.testing.assert_array_equal(segmented_pool(x), x.reshape(-1))
    np.testing.assert_array_equal(segmented_pool(np.full((17, 2), 4.0)), np.full(20, 4.0))
    with pytest.raises(ValueError):
        segmented_pool(np.zeros((9, 2)))


def test_rsa_properties():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(8, 5))
    assert rsa_score(v, v) == 1.0
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    assert rsa_score(v, v @ q) == pytest.approx(1.0, abs=1e-12)
    t = rng.normal(size=(8, 6))
    assert abs(rsa_score(v * 7.5, t * 0.01) - rsa_score(v, t)) < 1e-7
    d = rdm(v)
    assert np.allclose(d, d.T, atol=1e-7) and np.all(np.diag(d) == 0)
    with pytest.raises(ValueError):
        rsa_score(v[:2], t[:2])


def test_rsa_three_sentences_closed_form():
    a = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    b = np.array([[1.0, 0.0], [1.0, 0.2], [0.0, 1.0]])

    def tri(x):
        u = x / np.linalg.norm(x, axis=1, keepdims=True)
        s = u @ u.T
        return np.array([1 - s[0, 1], 1 - s[0, 2], 1 - s[1, 2]])

    x, y = tri(a), tri(b)
    expect = np.corrcoef(x, y)[0, 1]
    assert rsa_score(a, b) == pytest.approx(expect, abs=1e-10)


def test_rsa_zero_variance():
    v = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    w = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    with pytest.raises(ValueError):
        rsa_score(v, w)


def test_pca():
    rng = np.random.default_rng(1)
    t = rng.normal(size=50)
    line = np.outer(t, [1.0, 2.0, -2.0]) + 3.0
    res = pca_project(line, 1)
    assert res.explained_variance_ratio[0] == pytest.approx(1.0)
    x = rng.normal(size=(40, 4)) @ rng.normal(size=(4, 4))
    res = pca_project(x, 4)
    np.testing.assert_allclose(res.projections.mean(axis=0), 0, atol=1e-10)
    np.testing.assert_allclose(res.components @ res.components.T, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(res.inverse_transform(res.projections), x, atol=1e-6)
    assert np.all(res.components[np.arange(4), np.abs(res.components).argmax(1)] > 0)
    with pytest.raises(ValueError):
        pca_project(line, 2)


def test_lda_recovers_axis():
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=(200, 5))
    x1 = rng.normal(size=(200, 5)) + np.array([6.0, 0, 0, 0, 0])
    x = np.vstack([x0, x1])
    y = np.repeat([0, 1], 200)
    w = lda_axis(x, y)
    assert abs(w[0]) > 0.99 and np.linalg.norm(w) == pytest.approx(1.0)
    assert (x1 @ w).mean() > (x0 @ w).mean()
    with pytest.raises(ValueError):
        lda_axis(np.vstack([x0, x0]), y)


def test_lda_projected_separation():
    rng = np.random.default_rng(3)
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    L = np.linalg.cholesky(cov)
    x0 = rng.normal(size=(500, 2)) @ L.T
    x1 = rng.normal(size=(500, 2)) @ L.T + np.array([1.0, 1.0])
    x, y = np.vstack([x0, x1]), np.repeat([0, 1], 500)
    w = lda_axis(x, y)
    mu0, mu1 = x0.mean(0), x1.mean(0)
    sw = (x0 - mu0).T @ (x0 - mu0) + (x1 - mu1).T @ (x1 - mu1)
    # projected separation over projected within-class spread equals the Mahalanobis form
    gap = (mu1 - mu0) @ w
    spread = w @ sw @ w
    d = mu1 - mu0
    assert gap**2 / spread == pytest.approx(d @ np.linalg.solve(sw, d), rel=1e-4)


def test_word_distance():
    a = {"go": np.zeros(3), "no": np.array([1.0, 2.0, 2.0]), "yes": np.ones(3)}
    b = {"go": np.zeros(3), "no": np.array([1.0, 0.0, 0.0]), "up": np.ones(3)}
    dist, skipped = word_distance(a, b)
    assert dist == {"go": 0.0, "no": pytest.approx(np.sqrt(8.0))}
    assert skipped == ["up", "yes"]
    assert word_distance({"x": np.zeros(2)}, {"x": np.array([0.0, 1.0])})[0]["x"] == 1.0


def test_word_embeddings_average_frames():
    lat = [np.array([[1.0], [3.0], [10.0], [5.0]])]
    emb = word_embeddings(lat, [[0, 0, -1, 1]], [["hi", "yo"]])
    assert emb == {"hi": pytest.approx([2.0]), "yo": pytest.approx([5.0])}


def test_svg_scatter(tmp_path):
    p = tmp_path / "s.svg"
    scatter_svg(p, np.array([[0, 0], [1, 1], [2, 0.5]]), ["attempted", "imagined", "attempted"], ["a", "b", "c"], [0.1, 0.5, 1.0], "demo")
    text = p.read_text()
    assert text.startswith("<svg") and text.count("<circle") == 5
