"""NDC1 checkpoint container.

Layout: the 4 magic bytes ``NDC1``, a little-endian uint32 header length, a
UTF-8 JSON header, then the tensor payload. The header holds the format
version, stage tag, seed, config snapshot, subject registry, free-form
``extra`` metadata and the tensor manifest (name, shape, byte offset into the
payload, byte count). Tensors are stored as little-endian float32 in manifest
order. The header is written with sorted keys and no timestamps, so equal
inputs give byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"NDC1"
FORMAT_VERSION = 1
STAGES = ("pretrained", "ctc", "e2e")
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    stage: str
    seed: int
    config: dict
    tensors: dict[str, np.ndarray]
    subjects: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def section(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix.`` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p) :]: v for k, v in self.tensors.items() if k.startswith(p)}


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    if ckpt.stage not in STAGES:
        raise CheckpointError(f"stage must be one of {STAGES}, got {ckpt.stage!r}")
    manifest = []
    blobs = []
    offset = 0
    for name in ckpt.tensors:
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype=_F32)
        raw = arr.tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": ckpt.format_version,
        "stage": ckpt.stage,
        "seed": int(ckpt.seed),
        "config": ckpt.config,
        "subjects": list(ckpt.subjects),
        "extra": ckpt.extra,
        "tensors": manifest,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    return path


def _check_manifest(entries, payload_size: int) -> None:
    spans = []
    for e in entries:
        n = int(np.prod(e["shape"], dtype=np.int64)) * _F32.itemsize
        if e["nbytes"] != n:
            raise CheckpointError(f"tensor {e['name']}: {e['nbytes']} bytes recorded for shape {e['shape']}")
        if e["offset"] < 0 or e["offset"] + n > payload_size:
            raise CheckpointError(f"tensor {e['name']} lies outside the payload")
        spans.append((e["offset"], e["offset"] + n, e["name"]))
    spans.sort()
    for (_, end, a), (start, _, b) in zip(spans, spans[1:]):
        if start < end:
            raise CheckpointError(f"tensors {a} and {b} overlap")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not an NDC1 checkpoint")
    if len(data) < 8:
        raise CheckpointError(f"{path} is truncated")
    (n,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    payload = memoryview(data)[8 + n :]
    _check_manifest(header["tensors"], len(payload))
    tensors = {}
    for e in header["tensors"]:
        arr = np.frombuffer(payload, dtype=_F32, count=int(np.prod(e["shape"], dtype=np.int64)), offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return Checkpoint(
        stage=header["stage"],
        seed=header["seed"],
        config=header["config"],
        tensors=tensors,
        subjects=header.get("subjects", []),
        extra=header.get("extra", {}),
        format_version=header["format_version"],
    )


def prefixed(prefix: str, state: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in state.items()}
