"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The pipeline criteria (6, 7, 8, 10) share module-scoped runs of the default
configuration for seeds 0, 1 and 2, driven through the CLI exactly as a user
would. Expect roughly 15 minutes on one core.
"""

import csv
import itertools
import math
import shutil
import time

import numpy as np
import pytest
import yaml

from acceptance_log import record
from neurospeech import ctc
from neurospeech.analysis import align_sequences, lda_axis, rsa_score, segmented_pool, wer
from neurospeech.cascade import beam_search
from neurospeech.cli import EXIT_OK, main
from neurospeech.cli.checkpoint import load_checkpoint
from neurospeech.cli.config import ExperimentConfig
from neurospeech.cli.pipeline import Run, encoder_from, load_splits, new_encoder
from neurospeech.ctc import BLANK, SIL_ID
from neurospeech.e2e import LoraLinear, ModalityAligner, ProjectorMLP, contrastive_loss, info_nce
from neurospeech.encoder import TransformerBlock, evaluate_per, finetune_ctc
from neurospeech.numerics import F, Linear, Parameter, Tensor, grad_check, stream
from oracles import brute_ctc_logprob, brute_edit_distance, exhaustive_decode, random_log_probs, tiny_decode_instance

SEEDS = (0, 1, 2)
CASCADE_STEPS = (("simulate",), ("pretrain",), ("finetune-ctc",), ("decode", "cascaded"), ("eval",))
E2E_STEPS = (("train-e2e",), ("decode", "e2e"), ("eval",))


def _cli(out, seed, *cmd, config=None):
    argv = [*cmd, "--out-dir", str(out), "--seed", str(seed)]
    if config is not None:
        argv += ["--config", str(config)]
    code = main(argv)
    assert code == EXIT_OK, f"{' '.join(cmd)} exited with {code}"


def _metrics(out) -> dict:
    with open(out / "eval" / "metrics.csv", newline="") as fh:
        return {(r["metric"], r["strategy"]): float(r["value"]) for r in csv.DictReader(fh)}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def cascade_runs(workdir):
    runs = {}
    for seed in SEEDS:
        out = workdir / f"seed{seed}"
        t0 = time.perf_counter()
        for cmd in CASCADE_STEPS:
            _cli(out, seed, *cmd)
        runs[seed] = {"out": out, "wall": time.perf_counter() - t0, **{k[1]: v for k, v in _metrics(out).items()}}
    return runs


@pytest.fixture(scope="module")
def e2e_runs(workdir, cascade_runs):
    """E2E WER per seed with and without the contrastive term, from the same CTC encoder."""
    no_con = workdir / "no_contrastive.yaml"
    no_con.write_text(yaml.safe_dump({"e2e": {"contrastive": False}}))
    runs = {}
    for seed in SEEDS:
        out = cascade_runs[seed]["out"]
        alt = workdir / f"seed{seed}_nocon"
        shutil.copytree(out / "dataset", alt / "dataset")
        shutil.copy(out / "ctc.ndc", alt / "ctc.ndc")
        for cmd in E2E_STEPS:
            _cli(out, seed, *cmd)
            _cli(alt, seed, *cmd, config=no_con)
        runs[seed] = {"contrastive": _metrics(out)[("wer", "e2e")], "plain": _metrics(alt)[("wer", "e2e")]}
    return runs


def test_criterion_01_ctc_oracle_grid():
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    cases, worst = 0, 0.0
    for T in range(1, 7):
        for K in range(2, 5):
            blank = K - 1
            for L in range(4):
                for labels in itertools.product(range(K - 1), repeat=L):
                    if ctc.min_frames(labels) > T:
                        continue
                    for _ in range(3):
                        lp = random_log_probs(rng, T, K)
                        got = ctc.ctc_loss(Tensor(lp[None]), [list(labels)], blank=blank).item()
                        worst = max(worst, abs(got + brute_ctc_logprob(lp, labels, blank)))
                        cases += 1
    elapsed = time.perf_counter() - t0
    ok = cases >= 500 and worst <= 1e-6 and elapsed < 60
    detail = f"{cases} cases, max |err| {worst:.2e}, {elapsed:.1f}s"
    record(1, "CTC oracle equivalence", ok, detail)
    assert ok, detail


def _gradient_suite() -> dict:
    rng = stream(0, "acceptance-grad")
    errs = {}

    logits = Parameter(rng.normal(size=(3, 7, 6)))
    errs["ctc loss"] = grad_check(
        lambda: ctc.ctc_loss(F.log_softmax(logits), [[0, 1, 1], [2, 3, 4, 0], [4]], [7, 6, 4], blank=5), [logits]
    )

    block = TransformerBlock(8, 2, rng, dropout=0.0, attn_dropout=0.0)
    block.eval()
    x = Tensor(rng.normal(size=(2, 5, 8)))
    w = Tensor(rng.normal(size=(2, 5, 8)))
    key_mask = np.array([[True] * 5, [True] * 3 + [False] * 2])
    errs["encoder block"] = grad_check(lambda: (block(x, key_mask=key_mask) * w).sum(), block.parameters())

    proj = ProjectorMLP(6, 10, seed=0)
    xp = Tensor(rng.normal(size=(2, 5, 6)))
    wp = Tensor(rng.normal(size=(2, 5, 10)))
    # a 1e-3 step can straddle a ReLU kink; a float64 step of 1e-6 stays on one side
    errs["projector"] = grad_check(lambda: (proj(xp) * wp).sum(), proj.parameters(), eps=1e-6)

    al = ModalityAligner(8, 6, seed=0)
    ns = Tensor(rng.normal(size=(4, 3, 8)))
    ts = Tensor(rng.normal(size=(4, 5, 8)))
    mask = np.array([[1, 1, 1, 1, 0]] * 4, dtype=bool)
    errs["contrastive loss"] = grad_check(lambda: contrastive_loss(ns, ts, al, text_mask=mask), al.parameters())

    ad = LoraLinear(Linear(8, 6, rng), r=4, alpha=8, dropout=0.0, rng=rng)
    ad.lora_b.data[:] = rng.normal(size=ad.lora_b.shape)
    xl = Tensor(rng.normal(size=(4, 8)))
    wl = Tensor(rng.normal(size=(4, 6)))
    errs["lora layer"] = grad_check(lambda: (ad(xl) * wl).sum(), [ad.lora_a, ad.lora_b])
    return errs


def test_criterion_02_gradient_suite():
    t0 = time.perf_counter()
    errs = _gradient_suite()
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-3 and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f"; {elapsed:.1f}s"
    record(2, "gradient suite", ok, detail)
    assert ok, detail


def test_criterion_03_beam_exactness():
    rng = np.random.default_rng(2025)
    checked, mismatches, worst = 0, 0, 0.0
    while checked < 100:
        lp, prons, lex, lm, params = tiny_decode_instance(rng)
        best, score, _ = exhaustive_decode(lp, prons, lm, params.acoustic_scale, params.blank_penalty_nats, BLANK, SIL_ID)
        if best is None:
            continue
        top = beam_search(lp, lex, lm, params)[0]
        checked += 1
        worst = max(worst, abs(top.combined - score))
        mismatches += top.words != best
    ok = mismatches == 0 and worst <= 1e-5
    detail = f"{checked} instances, {mismatches} top-1 mismatches, max score gap {worst:.1e}"
    record(3, "beam-search exactness", ok, detail)
    assert ok, detail


def test_criterion_04_metric_oracles():
    rng = np.random.default_rng(4)
    bad_wer = bad_per = bad_trace = 0
    for _ in range(100):
        ref = [int(x) for x in rng.integers(0, 8, size=rng.integers(1, 10))]
        hyp = [int(x) for x in rng.integers(0, 8, size=rng.integers(0, 10))]
        d = brute_edit_distance(ref, hyp)
        bad_per += ctc.per(ref, hyp) != d / len(ref)
        bad_wer += wer(" ".join(f"w{x}" for x in ref), " ".join(f"w{x}" for x in hyp)) != d / len(ref)
        tr = align_sequences(ref, hyp)
        bad_trace += not (tr.cost == d and tr.ref() == ref and tr.hyp() == hyp)
    ok = bad_wer == bad_per == bad_trace == 0
    detail = f"100 pairs; WER mismatches {bad_wer}, PER mismatches {bad_per}, trace failures {bad_trace}"
    record(4, "metric oracles", ok, detail)
    assert ok, detail


def test_criterion_05_contrastive_values():
    gaps = {}
    for B in (2, 4, 8):
        z = Tensor(np.tile(np.array([[0.6, 0.8, 0.0]]), (B, 1)))
        gaps[B] = abs(info_nce(z, z, 0.1).item() - math.log(B))
    ortho = info_nce(Tensor(np.eye(4)), Tensor(np.eye(4)), 0.01).item()
    ok = max(gaps.values()) <= 1e-6 and ortho < 1e-3
    detail = "|loss - ln B| " + ", ".join(f"B={b}: {g:.1e}" for b, g in gaps.items()) + f"; orthogonal loss {ortho:.1e}"
    record(5, "contrastive analytic values", ok, detail)
    assert ok, detail


def test_criterion_06_synthetic_pipeline(cascade_runs):
    wers = [cascade_runs[s]["cascaded"] for s in SEEDS]
    pers = [cascade_runs[s]["phoneme"] for s in SEEDS]
    walls = [cascade_runs[s]["wall"] for s in SEEDS]
    ok = np.mean(wers) < 0.15 and np.mean(pers) < 0.10 and max(walls) < 30 * 60
    detail = (
        f"mean WER {np.mean(wers):.3f} {np.round(wers, 3).tolist()}, mean PER {np.mean(pers):.3f} "
        f"{np.round(pers, 3).tolist()}, slowest seed {max(walls):.0f}s"
    )
    record(6, "synthetic pipeline", ok, detail)
    assert ok, detail


def test_criterion_07_pretraining_benefit(cascade_runs):
    """Fine-tune on the first 100 training trials from the pretrained encoder and from scratch."""
    pre, scratch = [], []
    for seed in SEEDS:
        out = cascade_runs[seed]["out"]
        cfg = ExperimentConfig.from_dict({"seed": seed})
        run = Run(cfg, out, cfg.data["sim"]["subject"])
        train, val, test = load_splits(run)
        for enc, sink in ((encoder_from(run, load_checkpoint(out / "pretrained.ndc")), pre), (new_encoder(run), scratch)):
            finetune_ctc(enc, train[:100], val, run.subject, cfg.ctc_config())
            sink.append(evaluate_per(enc, test, run.subject))
    ok = np.mean(pre) <= np.mean(scratch)
    detail = f"mean PER pretrained {np.mean(pre):.5f} {np.round(pre, 4).tolist()} vs scratch {np.mean(scratch):.5f} {np.round(scratch, 4).tolist()}"
    record(7, "pretraining benefit", ok, detail)
    assert ok, detail


def test_criterion_08_e2e_versus_cascaded(cascade_runs, e2e_runs):
    cascaded = np.mean([cascade_runs[s]["cascaded"] for s in SEEDS])
    with_con = np.mean([e2e_runs[s]["contrastive"] for s in SEEDS])
    without = np.mean([e2e_runs[s]["plain"] for s in SEEDS])
    ratio_ok = with_con <= 2 * cascaded
    con_ok = with_con <= without
    ok = ratio_ok and con_ok
    detail = (
        f"e2e WER {with_con:.3f} vs 2x cascaded {2 * cascaded:.3f} ({'ok' if ratio_ok else 'exceeded'}); "
        f"without contrastive {without:.3f} ({'not worse' if con_ok else 'contrastive worse'})"
    )
    record(8, "e2e vs cascaded ordering", ok, detail)
    assert ok, detail


def test_criterion_09_interpretability():
    rng = np.random.default_rng(9)
    v = rng.normal(size=(12, 6))
    t = rng.normal(size=(12, 4))
    self_score = rsa_score(v, v)
    scale_gap = abs(rsa_score(v * 13.0, t * 0.02) - rsa_score(v, t))

    axis = rng.normal(size=5)
    axis /= np.linalg.norm(axis)
    x = np.vstack([rng.normal(size=(300, 5)), rng.normal(size=(300, 5)) + 5.0 * axis])
    cos = abs(float(lda_axis(x, np.repeat([0, 1], 300)) @ axis))

    pool_bad = []
    for L in range(10, 61):
        tokens = rng.normal(size=(L, 3))
        q, r = divmod(L, 10)
        bounds = np.cumsum([0] + [q + 1] * r + [q] * (10 - r))
        expect = np.concatenate([tokens[a:b].mean(axis=0) for a, b in zip(bounds, bounds[1:])])
        if not np.allclose(segmented_pool(tokens), expect, rtol=0, atol=1e-12):
            pool_bad.append(L)

    ok = self_score == 1.0 and scale_gap <= 1e-7 and cos > 0.99 and not pool_bad
    detail = f"rsa(V,V)={self_score!r}, scale gap {scale_gap:.1e}, LDA |cos| {cos:.4f}, pooling failures {pool_bad}"
    record(9, "interpretability suite", ok, detail)
    assert ok, detail


def test_criterion_10_reproducibility(workdir, cascade_runs, e2e_runs):
    first = cascade_runs[0]["out"]
    again = workdir / "seed0_repeat"
    for cmd in CASCADE_STEPS + E2E_STEPS:
        _cli(again, 0, *cmd)
    files = ["pretrained.ndc", "ctc.ndc", "e2e.ndc", "eval/metrics.csv", "decode/cascaded/hypotheses.tsv", "decode/e2e/hypotheses.tsv"]
    files += sorted(str(p.relative_to(first)) for p in (first / "metrics").glob("*.json"))
    differ = [rel for rel in files if (first / rel).read_bytes() != (again / rel).read_bytes()]
    ok = not differ
    detail = f"{len(files)} checkpoint and metric files compared, differing: {differ}"
    record(10, "bitwise reproducibility", ok, detail)
    assert ok, detail
