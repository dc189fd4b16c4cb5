"""Stage implementations behind the command-line interface.

Every stage reads and writes inside one run directory:

    dataset/                      simulated recordings (simulate)
    pretrained.ndc, ctc.ndc, e2e.ndc
    metrics/<stage>.json          best-validation and test metrics per stage
    decode/<strategy>/            per-trial candidate files + hypotheses.tsv
    eval/, rsa/, search/, report/
    manifests/<command>.json      command line, config hash, seed, wall time, input hashes
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..analysis import (
    align_sequences,
    confusion_matrix,
    corpus_wer,
    lda_axis,
    pca_project,
    rdm,
    rsa_score,
    scatter_svg,
    segmented_pool,
    word_distance,
    word_embeddings,
    write_confusion_csv,
    write_matrix_csv,
    write_metrics_csv,
    write_projection_csv,
)
from ..cascade import PhonemeTrie, beam_search, rescore, train_ngram, write_candidates
from ..e2e import EndToEndModel, TokenVocab, ToyDecoderLM, decode_trials, evaluate_wer, pretrain_lm, train_e2e
from ..encoder import EncoderModel, TrainConfig, evaluate_per, finetune_ctc, make_batch, predict_log_probs, pretrain
from ..numerics import NonFiniteError, no_grad, stream
from ..synthdata import Lexicon, detect_dead_channels, generate_dataset, interpolate_dead_channels, load_dataset, save_dataset, split_dataset, zscore_by_day
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, prefixed, save_checkpoint
from .config import ConfigError, ExperimentConfig

log = logging.getLogger(__name__)

CANDIDATE_HEADER = ("sentence", "acoustic_score", "lm_score", "combined_score")


class StageError(RuntimeError):
    """A stage was invoked before the stage it depends on produced its output."""


@dataclass
class Run:
    cfg: ExperimentConfig
    out: Path
    subject: str
    argv: list[str] = field(default_factory=list)
    inputs: list[Path] = field(default_factory=list)
    outputs: list[Path] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.cfg.seed

    def path(self, *parts) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def require(self, path: Path, hint: str) -> Path:
        if not path.exists():
            raise StageError(f"missing {path}: {hint}")
        self.inputs.append(path)
        return path


def _hash_path(path: Path) -> str:
    h = hashlib.sha256()
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    for f in files:
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:16]


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_manifest(run: Run, command: str, wall: float) -> Path:
    manifest = {
        "command": run.argv,
        "config_hash": run.cfg.digest(),
        "seed": run.seed,
        "wall_time_s": round(wall, 3),
        "inputs": {str(p.relative_to(run.out) if p.is_relative_to(run.out) else p): _hash_path(p) for p in run.inputs if p.exists()},
        "outputs": sorted(str(p.relative_to(run.out)) for p in run.outputs if p.is_relative_to(run.out)),
    }
    path = run.path("manifests", f"{command}.json")
    write_json(path, manifest)
    return path


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise NonFiniteError(f"{what} is not finite ({value})")
    return value


# data ------------------------------------------------------------------------


def cmd_simulate(run: Run, args) -> None:
    ds = generate_dataset(run.cfg.sim_config())
    dest = run.out / "dataset"
    save_dataset(ds, dest)
    (run.out / "config.yaml").write_text(run.cfg.dump())
    run.outputs += [dest / "manifest.json", dest / "trials.bin", run.out / "config.yaml"]
    log.info("simulated %d trials into %s", len(ds), dest)


def load_splits(run: Run):
    """Preprocessed (train, val, test) trial lists for the run's dataset."""
    src = run.require(run.out / "dataset", "run `simulate` first")
    ds = load_dataset(src)
    dead = detect_dead_channels(ds)
    if dead:
        ds = interpolate_dead_channels(ds, dead)
    ds = zscore_by_day(ds)
    return tuple(part.trials() for part in split_dataset(ds, run.cfg.split_fractions(), seed=run.seed))


# encoder stages ----------------------------------------------------------------


def new_encoder(run: Run) -> EncoderModel:
    return EncoderModel(run.cfg.patch_config(), seed=run.seed, subjects=(run.subject,))


def _checkpoint(run: Run, args, default: str, stage: str, hint: str) -> Checkpoint:
    path = Path(args.checkpoint) if getattr(args, "checkpoint", None) else run.out / default
    run.require(path, hint)
    try:
        ckpt = load_checkpoint(path)
    except CheckpointError as exc:
        raise StageError(str(exc)) from exc
    if ckpt.stage != stage:
        raise StageError(f"{path} holds a {ckpt.stage!r} checkpoint; this command needs a {stage!r} one ({hint})")
    return ckpt


def encoder_from(run: Run, ckpt: Checkpoint, prefix: str = "encoder") -> EncoderModel:
    enc = new_encoder(run)
    enc.load_state_dict(ckpt.section(prefix))
    enc.eval()
    return enc


def _save(run: Run, name: str, stage: str, tensors: dict, extra: dict | None = None) -> Path:
    path = save_checkpoint(
        run.out / name,
        Checkpoint(stage=stage, seed=run.seed, config=run.cfg.to_dict(), tensors=tensors, subjects=[run.subject], extra=extra or {}),
    )
    run.outputs.append(path)
    return path


def _metrics(run: Run, stage: str, values: dict) -> None:
    path = run.out / "metrics" / f"{stage}.json"
    write_json(path, values)
    run.outputs.append(path)


def cmd_pretrain(run: Run, args) -> None:
    train, val, _ = load_splits(run)
    enc = new_encoder(run)
    res = pretrain(enc, train, val, run.subject, run.cfg.pretrain_config(), run.cfg.mask_config())
    _finite(res.history[-1]["loss"], "pretraining loss")
    _save(run, "pretrained.ndc", "pretrained", prefixed("encoder", enc.state_dict()))
    _metrics(run, "pretrain", {"best_val_r2": res.best_metric, "best_step": res.best_step, "final_loss": res.history[-1]["loss"]})


def ctc_stage(run: Run, args, train, val, train_cfg: TrainConfig | None = None):
    """Fine-tune for phonemes from the pretrained checkpoint (or from scratch)."""
    if args.no_pretrain:
        enc = new_encoder(run)
    else:
        ckpt = _checkpoint(run, args, "pretrained.ndc", "pretrained", "run `pretrain` first or pass --no-pretrain")
        enc = encoder_from(run, ckpt)
    res = finetune_ctc(enc, train, val, run.subject, train_cfg or run.cfg.ctc_config())
    _finite(res.history[-1]["loss"], "CTC loss")
    return enc, res


def cmd_finetune_ctc(run: Run, args) -> None:
    train, val, test = load_splits(run)
    enc, res = ctc_stage(run, args, train, val)
    test_per = evaluate_per(enc, test, run.subject)
    _save(run, "ctc.ndc", "ctc", prefixed("encoder", enc.state_dict()), {"pretrained": not args.no_pretrain})
    _metrics(
        run,
        "ctc",
        {"best_val_per": res.best_metric, "best_step": res.best_step, "test_per": test_per, "skipped": res.skipped, "pretrained": not args.no_pretrain},
    )


# sentence stages -----------------------------------------------------------------


def build_lm(run: Run, corpus) -> ToyDecoderLM:
    e2e = run.cfg.e2e_config()
    lm = ToyDecoderLM(TokenVocab(Lexicon.default().words), e2e.decoder, seed=run.seed)
    losses = pretrain_lm(lm, corpus, steps=e2e.lm_pretrain_steps, seed=run.seed)
    if losses:
        _finite(losses[-1], "decoder LM loss")
    lm.eval()
    return lm


def e2e_model_from(run: Run, ckpt: Checkpoint) -> EndToEndModel:
    e2e = run.cfg.e2e_config()
    enc = new_encoder(run)
    lm = ToyDecoderLM(TokenVocab(Lexicon.default().words), e2e.decoder, seed=run.seed)
    model = EndToEndModel(enc, lm, e2e, run.subject)
    model.load_state_dict(ckpt.section("model"))
    model.eval()
    return model


def cmd_train_e2e(run: Run, args) -> None:
    train, val, test = load_splits(run)
    ctc_path = Path(args.checkpoint) if args.checkpoint else run.out / "ctc.ndc"
    if ctc_path.exists():
        enc = encoder_from(run, _checkpoint(run, args, "ctc.ndc", "ctc", "run `finetune-ctc` first"))
        ctc_init = True
    elif args.stage == "pretrained":
        enc = encoder_from(run, _checkpoint(run, argparse.Namespace(checkpoint=None), "pretrained.ndc", "pretrained", "run `pretrain` first"))
        ctc_init = False
    elif args.no_pretrain:
        enc = new_encoder(run)
        ctc_init = False
    else:
        raise StageError(
            f"missing {ctc_path}: run `finetune-ctc` first, or pass --stage pretrained / --no-pretrain "
            "to train the sentence decoder without phoneme fine-tuning"
        )
    lm = build_lm(run, [t.transcript for t in train])
    cfg = run.cfg.e2e_config()
    model = EndToEndModel(enc, lm, cfg, run.subject)
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        res = train_e2e(model, train, val, cfg, ctc_initialized=ctc_init)
    _finite(res.history[-1]["ce"], "end-to-end CE loss")
    test_wer = evaluate_wer(model, test, run.seed)
    _save(run, "e2e.ndc", "e2e", prefixed("model", model.state_dict()), {"ctc_initialized": ctc_init})
    _metrics(run, "e2e", {"best_val_wer": res.best_metric, "best_step": res.best_step, "test_wer": test_wer, "ctc_initialized": ctc_init})


def _write_hypotheses(path: Path, trials, hyps) -> None:
    with open(path, "w") as fh:
        fh.write("trial\treference\thypothesis\n")
        for i, (t, h) in enumerate(zip(trials, hyps)):
            fh.write(f"{i}\t{t.sentence}\t{h}\n")


def read_hypotheses(path: Path) -> tuple[list[str], list[str]]:
    refs, hyps = [], []
    lines = path.read_text().splitlines()
    for line in lines[1:]:
        _, ref, hyp = line.split("\t")
        refs.append(ref)
        hyps.append(hyp)
    return refs, hyps


def decode_cascaded(run: Run, args, enc: EncoderModel, train, trials, neural_lm=None):
    """Hypotheses and n-best lists for ``trials``."""
    params = run.cfg.decode_params(args.beam_size, args.alpha)
    casc = run.cfg.section("cascade")
    lex = Lexicon.default()
    lm = train_ngram([t.transcript for t in train], casc["ngram_order"], casc["discount"], vocabulary=lex.words)
    trie = PhonemeTrie(lex)
    score = None
    if params.rescore_alpha > 0:
        neural_lm = neural_lm or build_lm(run, [t.transcript for t in train])
        score = neural_lm.sentence_logprob
    nbests, hyps = [], []
    for lp in predict_log_probs(enc, trials, run.subject):
        nbest = beam_search(lp, trie, lm, params)
        nbests.append(nbest)
        best = rescore(nbest, score, params.rescore_alpha, params.acoustic_scale) if nbest else None
        hyps.append(best.sentence if best else "")
    return hyps, nbests


def cmd_decode(run: Run, args) -> None:
    train, _, test = load_splits(run)
    dest = run.out / "decode" / args.strategy
    dest.mkdir(parents=True, exist_ok=True)
    if args.strategy == "cascaded":
        enc = encoder_from(run, _checkpoint(run, args, "ctc.ndc", "ctc", "run `finetune-ctc` first"))
        hyps, nbests = decode_cascaded(run, args, enc, train, test)
        for i, nbest in enumerate(nbests):
            path = dest / f"trial_{i:04d}.tsv"
            write_candidates(path, nbest)
            run.outputs.append(path)
    else:
        model = e2e_model_from(run, _checkpoint(run, args, "e2e.ndc", "e2e", "run `train-e2e` first"))
        hyps = []
        for i, (words, lps) in enumerate(decode_trials(model, test, run.seed)):
            sentence = " ".join(words)
            hyps.append(sentence)
            total = float(np.sum(lps))
            _finite(total, "token log-probability")
            path = dest / f"trial_{i:04d}.tsv"
            with open(path, "w") as fh:
                fh.write("\t".join(CANDIDATE_HEADER) + "\n")
                fh.write(f"{sentence}\t{total!r}\t{0.0!r}\t{total!r}\n")
            with open(dest / f"trial_{i:04d}.tokens.tsv", "w") as fh:
                fh.write("token\tlogprob\n")
                tokens = words + [model.vocab.tokens[model.vocab.eos]] if len(lps) > len(words) else words
                for tok, lp in zip(tokens, lps):
                    fh.write(f"{tok}\t{float(lp)!r}\n")
            run.outputs.append(path)
    hyp_path = dest / "hypotheses.tsv"
    _write_hypotheses(hyp_path, test, hyps)
    run.outputs.append(hyp_path)
    wer = corpus_wer([t.sentence for t in test], hyps)
    log.info("%s test WER %.4f", args.strategy, wer)


# evaluation ------------------------------------------------------------------


def cmd_eval(run: Run, args) -> None:
    rows = []
    found = False
    for strategy in ("cascaded", "e2e"):
        path = run.out / "decode" / strategy / "hypotheses.tsv"
        if not path.exists():
            continue
        found = True
        run.inputs.append(path)
        refs, hyps = read_hypotheses(path)
        rows.append({"strategy": strategy, "metric": "wer", "value": repr(corpus_wer(refs, hyps)), "n_trials": len(refs)})
    ctc_path = run.out / "ctc.ndc"
    if ctc_path.exists():
        _, _, test = load_splits(run)
        enc = encoder_from(run, _checkpoint(run, argparse.Namespace(checkpoint=None), "ctc.ndc", "ctc", ""))
        per = evaluate_per(enc, test, run.subject)
        rows.append({"strategy": "phoneme", "metric": "per", "value": repr(per), "n_trials": len(test)})
        found = True
    if not found:
        raise StageError("nothing to evaluate: run `finetune-ctc` and/or `decode` first")
    path = run.path("eval", "metrics.csv")
    write_metrics_csv(path, rows)
    run.outputs.append(path)


def _stage_checkpoint(run: Run, args) -> tuple[str, Checkpoint]:
    stage = args.stage or "ctc"
    name = {"pretrained": "pretrained.ndc", "ctc": "ctc.ndc", "e2e": "e2e.ndc"}[stage]
    return stage, _checkpoint(run, args, name, stage, f"no {stage} checkpoint in the run directory")


def encoder_for_stage(run: Run, args) -> EncoderModel:
    stage, ckpt = _stage_checkpoint(run, args)
    if stage == "e2e":
        return e2e_model_from(run, ckpt).encoder
    return encoder_from(run, ckpt)


def latents(run: Run, enc: EncoderModel, trials) -> list[np.ndarray]:
    enc.eval()
    out = []
    with no_grad():
        for t in trials:
            x, _, lengths = make_batch([t], enc.cfg.t_patch)
            out.append(enc.encode(x, run.subject, lengths).data[0].astype(np.float64))
    return out


def cmd_rsa(run: Run, args) -> None:
    train, _, test = load_splits(run)
    enc = encoder_for_stage(run, args)
    ev = run.cfg.section("eval")
    chosen = [t for t in test if t.n_bins // enc.cfg.t_patch >= ev["rsa_segments"]][: ev["rsa_sentences"]]
    if len(chosen) < 3:
        raise StageError("RSA needs at least 3 test sentences long enough to segment")
    neural = np.stack([segmented_pool(lat, ev["rsa_segments"]) for lat in latents(run, enc, chosen)])
    e2e_path = run.out / "e2e.ndc"
    lm = e2e_model_from(run, load_checkpoint(e2e_path)).lm if e2e_path.exists() else build_lm(run, [t.transcript for t in train])
    table = lm.embed.weight.data.astype(np.float64)
    text = np.stack([table[lm.vocab.encode(t.transcript)].mean(axis=0) for t in chosen])
    score = rsa_score(neural, text)
    labels = [f"s{i}" for i in range(len(chosen))]
    for name, mat in (("neural_rdm.csv", rdm(neural)), ("text_rdm.csv", rdm(text))):
        path = run.path("rsa", name)
        write_matrix_csv(path, mat, labels)
        run.outputs.append(path)
    path = run.path("rsa", "rsa.json")
    write_json(path, {"rsa": score, "n_sentences": len(chosen), "stage": args.stage or "ctc"})
    run.outputs.append(path)


# search ----------------------------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    batch_sizes: tuple[int, ...] = (8, 16, 32, 64)
    weight_decay: tuple[float, float] = (5e-5, 0.1)
    learning_rate: tuple[float, float] = (5e-5, 1e-3)

    def sample(self, rng: np.random.Generator) -> dict:
        def log_uniform(lo, hi):
            return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

        return {
            "batch_size": int(rng.choice(self.batch_sizes)),
            "weight_decay": log_uniform(*self.weight_decay),
            "lr": log_uniform(*self.learning_rate),
        }

    def contains(self, sample: dict) -> bool:
        return (
            sample["batch_size"] in self.batch_sizes
            and self.weight_decay[0] <= sample["weight_decay"] <= self.weight_decay[1]
            and self.learning_rate[0] <= sample["lr"] <= self.learning_rate[1]
        )


def cmd_search(run: Run, args) -> None:
    train, val, _ = load_splits(run)
    ev = run.cfg.section("eval")
    space = SearchSpace()
    rng = stream(run.seed, "search")
    base = run.cfg.ctc_config()
    results = []
    for i in range(ev["search_samples"]):
        hp = space.sample(rng)
        cfg = TrainConfig(
            steps=ev["search_steps"],
            batch_size=hp["batch_size"],
            lr=hp["lr"],
            weight_decay=hp["weight_decay"],
            warmup=min(base.warmup, ev["search_steps"] // 5),
            grad_clip=base.grad_clip,
            eval_every=ev["search_steps"],
            seed=run.seed + i,
            augment=base.augment,
        )
        t0 = time.perf_counter()
        _, res = ctc_stage(run, args, train, val, cfg)
        entry = {"run": i, **hp, "val_per": res.best_metric, "seed": cfg.seed}
        path = run.path("search", f"run_{i:02d}", "manifest.json")
        write_json(path, {**entry, "config_hash": run.cfg.digest(), "steps": cfg.steps, "wall_time_s": round(time.perf_counter() - t0, 3)})
        run.outputs.append(path)
        results.append(entry)
    best = min(results, key=lambda r: (r["val_per"], r["run"]))
    path = run.path("search", "best.json")
    write_json(path, {"best": best, "runs": results})
    run.outputs.append(path)


# report ------------------------------------------------------------------------


def _patch_words(trial, t_patch: int, n_patches: int) -> np.ndarray:
    """Word position per patch: the word covering the patch's centre bin (-1 for silence)."""
    centre = np.minimum(np.arange(n_patches) * t_patch + t_patch // 2, trial.n_bins - 1)
    return np.asarray(trial.bin_words)[centre]


def cmd_report(run: Run, args) -> None:
    metrics = run.require(run.out / "eval" / "metrics.csv", "run `eval` first")
    ev = run.cfg.section("eval")
    rows = [line.split(",") for line in metrics.read_text().splitlines()]
    records = [dict(zip(rows[0], r)) for r in rows[1:]]
    for stage in ("pretrain", "ctc", "e2e"):
        p = run.out / "metrics" / f"{stage}.json"
        if p.exists():
            for k, v in sorted(json.loads(p.read_text()).items()):
                records.append({"strategy": stage, "metric": k, "value": repr(v), "n_trials": ""})
    rsa_path = run.out / "rsa" / "rsa.json"
    if rsa_path.exists():
        info = json.loads(rsa_path.read_text())
        records.append({"strategy": info["stage"], "metric": "rsa", "value": repr(info["rsa"]), "n_trials": info["n_sentences"]})
        for name in ("neural_rdm.csv", "text_rdm.csv"):
            dst = run.path("report", f"rdm_{name}")
            dst.write_bytes((run.out / "rsa" / name).read_bytes())
            run.outputs.append(dst)
    path = run.path("report", "metrics.csv")
    write_metrics_csv(path, records)
    run.outputs.append(path)

    for strategy in ("cascaded", "e2e"):
        hyp = run.out / "decode" / strategy / "hypotheses.tsv"
        if not hyp.exists():
            continue
        refs, hyps = read_hypotheses(hyp)
        traces = [align_sequences(r.split(), h.split()) for r, h in zip(refs, hyps)]
        cm = confusion_matrix(traces, min_count=ev["confusion_min_count"]).reorder(ev["confusion_order"])
        path = run.path("report", f"confusion_{strategy}.csv")
        write_confusion_csv(path, cm)
        run.outputs.append(path)

    # word embeddings in two conditions: early vs late recording days
    _, _, test = load_splits(run)
    enc = encoder_for_stage(run, args)
    days = sorted({t.uid[0] for t in test})
    if len(days) < 2:
        log.warning("projection report needs test trials from at least two days; skipped")
        return
    early = set(days[: len(days) // 2])
    groups = {"early": [t for t in test if t.uid[0] in early], "late": [t for t in test if t.uid[0] not in early]}
    emb = {}
    for g, trials in groups.items():
        lats = latents(run, enc, trials)
        frame_words = [_patch_words(t, enc.cfg.t_patch, len(l)) for t, l in zip(trials, lats)]
        emb[g] = word_embeddings(lats, frame_words, [t.transcript for t in trials])
    dist, _ = word_distance(emb["early"], emb["late"])
    words = sorted(dist)
    if len(words) < 2:
        log.warning("too few shared words for the projection report; skipped")
        return
    feats = np.stack([emb["early"][w] for w in words] + [emb["late"][w] for w in words])
    labels = words + words
    grp = ["early"] * len(words) + ["late"] * len(words)
    intensity = [dist[w] for w in words] * 2
    pca = pca_project(feats, 2)
    path = run.path("report", "projection_pca.csv")
    write_projection_csv(path, labels, grp, pca.projections, {"distance": [repr(v) for v in intensity]})
    run.outputs.append(path)
    axis = lda_axis(feats, np.array([0] * len(words) + [1] * len(words)))
    path = run.path("report", "projection_lda.csv")
    write_projection_csv(path, labels, grp, (feats @ axis)[:, None], {"distance": [repr(v) for v in intensity]})
    run.outputs.append(path)
    path = run.path("report", "word_distance.csv")
    write_metrics_csv(path, [{"word": w, "distance": repr(dist[w])} for w in words])
    run.outputs.append(path)
    path = run.path("report", "projection.svg")
    scatter_svg(path, pca.projections, grp, labels, intensity, title="word embeddings, PCA")
    run.outputs.append(path)


COMMANDS = {
    "simulate": cmd_simulate,
    "pretrain": cmd_pretrain,
    "finetune-ctc": cmd_finetune_ctc,
    "train-e2e": cmd_train_e2e,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "rsa": cmd_rsa,
    "search": cmd_search,
    "report": cmd_report,
}

__all__ = ["COMMANDS", "Run", "StageError", "SearchSpace", "ConfigError", "write_manifest", "load_splits"]
