"""CSV and SVG writers for the report command."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .alignment import ConfusionMatrix


def write_metrics_csv(path, rows: Sequence[Mapping[str, object]]) -> None:
    """One row per (run, metric) record; the columns are the union of keys, sorted."""
    cols = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def write_confusion_csv(path, cm: ConfusionMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in cm.to_rows():
            w.writerow(row)


def write_matrix_csv(path, matrix: np.ndarray, labels: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *labels])
        for lab, row in zip(labels, np.asarray(matrix)):
            w.writerow([lab, *(repr(float(v)) for v in row)])


def write_projection_csv(path, labels: Sequence[str], groups: Sequence[str], coords: np.ndarray, extra: Mapping[str, Sequence] | None = None) -> None:
    coords = np.asarray(coords)
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "group", *(f"c{i + 1}" for i in range(coords.shape[1])), *extra])
        for i, (lab, g) in enumerate(zip(labels, groups)):
            w.writerow([lab, g, *(repr(float(v)) for v in coords[i]), *(extra[k][i] for k in extra)])


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def scatter_svg(
    path,
    points: np.ndarray,
    groups: Sequence[str],
    labels: Sequence[str] | None = None,
    intensity: Sequence[float] | None = None,
    title: str = "",
    size: int = 480,
) -> None:
    """2-D scatter coloured by group; ``intensity`` in [0, 1] sets marker opacity."""
    pts = np.asarray(points, dtype=np.float64)[:, :2]
    pad = 40
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    xy = pad + (pts - lo) / span * (size - 2 * pad)
    xy[:, 1] = size - xy[:, 1]
    names = list(dict.fromkeys(groups))
    if intensity is None:
        alpha = np.full(len(pts), 0.8)
    else:
        v = np.asarray(intensity, dtype=np.float64)
        rng = v.max() - v.min()
        alpha = 0.25 + 0.75 * ((v - v.min()) / rng if rng > 0 else np.ones_like(v))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{size / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for i, (x, y) in enumerate(xy):
        color = _PALETTE[names.index(groups[i]) % len(_PALETTE)]
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="{color}" fill-opacity="{alpha[i]:.3f}"/>')
        if labels is not None:
            out.append(f'<text x="{x + 5:.2f}" y="{y - 5:.2f}" font-size="9">{escape(str(labels[i]))}</text>')
    for j, name in enumerate(names):
        color = _PALETTE[j % len(_PALETTE)]
        out.append(f'<circle cx="{pad}" cy="{size - 12 - 14 * j}" r="4" fill="{color}"/>')
        out.append(f'<text x="{pad + 8}" y="{size - 8 - 14 * j}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
