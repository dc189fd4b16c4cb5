"""On-disk dataset container.

``manifest.json`` lists sessions and, per trial, the byte offset and shape of
its block inside ``trials.bin``. A block is the T x C feature matrix
(little-endian float32, row-major) followed by the phoneme labels, the
per-bin phoneme labels and the per-bin word positions (little-endian int32).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .simulate import NeuralDataset, Session, Trial

FORMAT_VERSION = 1
_F32 = np.dtype("<f4")
_I32 = np.dtype("<i4")


def save_dataset(ds: NeuralDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    offset = 0
    sessions = []
    with open(out / "trials.bin", "wb") as fh:
        for s in ds.sessions:
            entries = []
            for t in s.trials:
                T = t.features.shape[0]
                bin_ph = t.bin_phonemes if t.bin_phonemes is not None else np.full(T, -1)
                bin_w = t.bin_words if t.bin_words is not None else np.full(T, -1)
                blocks = [
                    np.ascontiguousarray(t.features, dtype=_F32).tobytes(),
                    np.asarray(t.phonemes, dtype=_I32).tobytes(),
                    np.asarray(bin_ph, dtype=_I32).tobytes(),
                    np.asarray(bin_w, dtype=_I32).tobytes(),
                ]
                size = sum(len(b) for b in blocks)
                for b in blocks:
                    fh.write(b)
                entries.append(
                    {
                        "uid": list(t.uid),
                        "offset": offset,
                        "nbytes": size,
                        "n_bins": T,
                        "n_labels": len(t.phonemes),
                        "transcript": " ".join(t.transcript),
                    }
                )
                offset += size
            sessions.append({"day_index": s.day_index, "subject": s.subject, "trials": entries})
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_spike": ds.n_spike,
        "n_sbp": ds.n_sbp,
        "lexicon_hash": ds.lexicon_hash,
        "meta": ds.meta,
        "sessions": sessions,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def load_dataset(in_dir) -> NeuralDataset:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {manifest.get('format_version')!r}")
    raw = (src / "trials.bin").read_bytes()
    C = manifest["n_spike"] + manifest["n_sbp"]
    sessions = []
    for s in manifest["sessions"]:
        trials = []
        for e in s["trials"]:
            T, L, off = e["n_bins"], e["n_labels"], e["offset"]
            if off < 0 or off + e["nbytes"] > len(raw):
                raise ValueError(f"trial {e['uid']} block out of bounds")
            feats = np.frombuffer(raw, _F32, T * C, off).reshape(T, C).astype(np.float32)
            off += T * C * 4
            labels = np.frombuffer(raw, _I32, L, off).astype(int).tolist()
            off += L * 4
            bin_ph = np.frombuffer(raw, _I32, T, off).astype(np.int64)
            off += T * 4
            bin_w = np.frombuffer(raw, _I32, T, off).astype(np.int64)
            words = e["transcript"].split()
            trials.append(Trial(feats, words, labels, bin_ph, bin_w, uid=tuple(e["uid"])))
        sessions.append(Session(s["day_index"], trials, s["subject"]))
    return NeuralDataset(sessions, manifest["n_spike"], manifest["n_sbp"], manifest["lexicon_hash"], manifest["meta"])
