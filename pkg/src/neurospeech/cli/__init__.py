"""Command-line entry point: ``neurospeech <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 stage-order error,
4 non-finite numbers during training or evaluation.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from ..numerics import NonFiniteError
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .pipeline import COMMANDS, Run, SearchSpace, StageError, write_manifest

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_NUMERIC = 4

log = logging.getLogger("neurospeech")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (defaults to the desk preset)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", default="runs/default", help="run directory shared by all stages")
    common.add_argument("--checkpoint", help="explicit input checkpoint instead of the run directory's")
    common.add_argument("--stage", choices=("pretrained", "ctc", "e2e"), help="checkpoint stage to read (rsa, report, train-e2e override)")
    common.add_argument("--no-pretrain", action="store_true", help="start CTC fine-tuning from a randomly initialised encoder")
    common.add_argument("--beam-size", type=int, help="override cascade.beam_size")
    common.add_argument("--alpha", type=float, help="override cascade.rescore_alpha")
    common.add_argument("--subject", help="subject id (defaults to sim.subject)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="neurospeech", description="Synthetic speech-BCI decoding pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "decode":
            p.add_argument("strategy", choices=("cascaded", "e2e"))
    return parser


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict({})
    cfg = cfg.with_seed(args.seed)
    if args.beam_size is not None and args.beam_size < 1:
        raise ConfigError("--beam-size: must be >= 1")
    if args.alpha is not None and not 0.0 <= args.alpha <= 1.0:
        raise ConfigError("--alpha: must lie in [0, 1]")
    return cfg


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        run = Run(cfg, Path(args.out_dir), args.subject or cfg.data["sim"]["subject"], ["neurospeech", *argv])
        run.out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        COMMANDS[args.command](run, args)
        write_manifest(run, args.command if args.command != "decode" else f"decode-{args.strategy}", time.perf_counter() - t0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


__all__ = [
    "main",
    "build_parser",
    "ExperimentConfig",
    "ConfigError",
    "StageError",
    "Checkpoint",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "SearchSpace",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_STAGE",
    "EXIT_NUMERIC",
]
