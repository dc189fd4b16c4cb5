"""Experiment configuration: a YAML document with one section per pipeline stage."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import fields
from pathlib import Path

import yaml

from ..cascade import DecodeParams
from ..e2e import DecoderConfig, E2EConfig
from ..encoder import AugmentConfig, MaskConfig, PatchConfig, TrainConfig
from ..synthdata import SimConfig


class ConfigError(ValueError):
    """Schema or value violation; the message starts with the offending key path."""


def _augment_defaults() -> dict:
    return {f.name: getattr(AugmentConfig(), f.name) for f in fields(AugmentConfig)}


def _train_defaults(**over) -> dict:
    base = TrainConfig()
    out = {f.name: getattr(base, f.name) for f in fields(TrainConfig) if f.name not in ("seed", "augment")}
    out["augment"] = _augment_defaults()
    out.update(over)
    return out


def _defaults() -> dict:
    sim = {f.name: getattr(SimConfig(), f.name) for f in fields(SimConfig) if f.name != "seed"}
    sim["phoneme_dwell_bins"] = list(sim["phoneme_dwell_bins"])
    sim["words_per_sentence"] = list(sim["words_per_sentence"])
    sim["split"] = [500, 50, 50]
    encoder = {f.name: getattr(PatchConfig(), f.name) for f in fields(PatchConfig) if f.name != "channels"}
    pretrain = _train_defaults(steps=400)
    pretrain.update(mask_ratio=MaskConfig().mask_ratio, max_span=MaskConfig().max_span)
    ctc = _train_defaults(steps=300)
    dp = DecodeParams()
    cascade = {f.name: getattr(dp, f.name) for f in fields(DecodeParams)}
    cascade.update(acoustic_scale=1.0, ngram_order=5, discount=0.5)
    e2e_cfg = E2EConfig()
    e2e = {f.name: getattr(e2e_cfg, f.name) for f in fields(E2EConfig) if f.name not in ("seed", "decoder", "augment")}
    e2e["decoder"] = {f.name: getattr(e2e_cfg.decoder, f.name) for f in fields(DecoderConfig)}
    e2e["augment"] = _augment_defaults()
    evaluation = {
        "confusion_order": "alphabetical",
        "confusion_min_count": 1,
        "rsa_segments": 10,
        "rsa_sentences": 20,
        "search_samples": 6,
        "search_steps": 100,
    }
    return {
        "preset": "desk",
        "seed": 0,
        "sim": sim,
        "encoder": encoder,
        "pretrain": pretrain,
        "ctc": ctc,
        "cascade": cascade,
        "e2e": e2e,
        "eval": evaluation,
    }


# Full-scale values; applied on top of the desk defaults when ``preset: full``.
FULL_PRESET = {
    "encoder": {"embed_dim": 384, "n_heads": 6, "depth": 7, "t_patch": 5, "dropout": 0.2, "attn_dropout": 0.4},
    "pretrain": {"lr": 5e-4, "weight_decay": 1e-5, "batch_size": 64, "mask_ratio": 0.5, "max_span": 15},
    "cascade": {"beam_size": 100, "acoustic_scale": 0.325, "blank_penalty": 90.0, "rescore_alpha": 0.55},
    "e2e": {
        "lr": 5e-5,
        "weight_decay": 1e-5,
        "batch_size": 16,
        "lora_rank": 8,
        "lora_alpha": 32.0,
        "lora_dropout": 0.2,
        "tau_init": 0.1,
        "top_p": 0.9,
        "temperature": 0.7,
        "max_new": 25,
    },
    "eval": {"search_samples": 30},
}

PRESETS = ("desk", "full")


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown key")
        ref = base[key]
        if isinstance(ref, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
            out[key] = _merge(ref, value, where + ".")
        else:
            out[key] = _coerce(ref, value, where)
    return out


def _coerce(ref, value, where: str):
    if ref is None or value is None:
        return value
    if isinstance(ref, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(ref, int) and not isinstance(value, bool) and isinstance(value, int):
        return value
    if isinstance(ref, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(ref, str) and isinstance(value, str):
        return value
    if isinstance(ref, list) and isinstance(value, list) and len(value) == len(ref):
        return [_coerce(r, v, f"{where}[{i}]") for i, (r, v) in enumerate(zip(ref, value))]
    raise ConfigError(f"{where}: expected {type(ref).__name__}, got {value!r}")


class ExperimentConfig:
    """Validated configuration tree.

    ``preset`` chooses the base values (``desk`` or ``full``); every other key
    overrides one default and must already exist in the schema.
    """

    def __init__(self, data: dict):
        self.data = data
        self._check()

    @classmethod
    def from_dict(cls, raw: dict | None = None) -> "ExperimentConfig":
        raw = dict(raw or {})
        preset = raw.get("preset", "desk")
        if preset not in PRESETS:
            raise ConfigError(f"preset: must be one of {PRESETS}, got {preset!r}")
        base = _defaults()
        if preset == "full":
            base = _merge(base, FULL_PRESET)
        return cls(_merge(base, raw))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError("<root>: expected a mapping")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.data, sort_keys=True).encode()).hexdigest()[:16]

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        data = self.to_dict()
        data["seed"] = int(seed)
        return ExperimentConfig(data)

    def section(self, name: str) -> dict:
        return copy.deepcopy(self.data[name])

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    # typed views; dataclass validation errors are reported with the section name
    def _build(self, name: str, fn):
        try:
            return fn()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {exc}") from exc

    def sim_config(self) -> SimConfig:
        s = self.section("sim")
        s.pop("split")
        return self._build("sim", lambda: SimConfig(seed=self.seed, **s))

    def split_fractions(self) -> tuple[float, float, float]:
        counts = self.data["sim"]["split"]
        if any(c < 0 for c in counts) or sum(counts) <= 0:
            raise ConfigError(f"sim.split: counts must be non-negative with a positive total, got {counts}")
        total = sum(counts)
        return tuple(c / total for c in counts)

    def patch_config(self) -> PatchConfig:
        return self._build("encoder", lambda: PatchConfig(channels=self.data["sim"]["channels"], **self.section("encoder")))

    def _train(self, name: str) -> TrainConfig:
        s = self.section(name)
        aug = s.pop("augment")
        for k in ("mask_ratio", "max_span"):
            s.pop(k, None)
        return self._build(name, lambda: TrainConfig(seed=self.seed, augment=AugmentConfig(**aug), **s))

    def pretrain_config(self) -> TrainConfig:
        return self._train("pretrain")

    def mask_config(self) -> MaskConfig:
        s = self.data["pretrain"]
        return MaskConfig(s["mask_ratio"], s["max_span"])

    def ctc_config(self) -> TrainConfig:
        return self._train("ctc")

    def decode_params(self, beam_size: int | None = None, alpha: float | None = None) -> DecodeParams:
        s = self.section("cascade")
        s.pop("ngram_order")
        s.pop("discount")
        if beam_size is not None:
            s["beam_size"] = beam_size
            s["n_best"] = min(s["n_best"], beam_size)
        if alpha is not None:
            s["rescore_alpha"] = alpha
        return self._build("cascade", lambda: DecodeParams(**s))

    def e2e_config(self) -> E2EConfig:
        s = self.section("e2e")
        dec = s.pop("decoder")
        aug = s.pop("augment")
        return self._build(
            "e2e",
            lambda: E2EConfig(seed=self.seed, decoder=DecoderConfig(**dec), augment=AugmentConfig(**aug), **s),
        )

    def _check(self) -> None:
        self.sim_config()
        self.split_fractions()
        self.patch_config()
        self.pretrain_config()
        self.ctc_config()
        self.decode_params()
        self.e2e_config()
        mr = self.data["pretrain"]["mask_ratio"]
        if not 0.0 <= mr <= 1.0:
            raise ConfigError(f"pretrain.mask_ratio: must lie in [0, 1], got {mr}")
        order = self.data["eval"]["confusion_order"]
        if order not in ("alphabetical", "error"):
            raise ConfigError(f"eval.confusion_order: must be alphabetical or error, got {order!r}")
        for key in ("search_samples", "rsa_segments", "rsa_sentences"):
            if self.data["eval"][key] < 1:
                raise ConfigError(f"eval.{key}: must be >= 1")
