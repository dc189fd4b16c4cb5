"""Per-day normalisation, dead-channel repair, augmentation and splitting."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from .simulate import NeuralDataset, Session, Trial, smooth_time


def _map_features(ds: NeuralDataset, fn) -> NeuralDataset:
    sessions = []
    for s in ds.sessions:
        sessions.append(Session(s.day_index, [replace(t, features=fn(s, t)) for t in s.trials], s.subject))
    return ds.with_sessions(sessions)


def session_moments(session: Session) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate([t.features for t in session.trials], axis=0).astype(np.float64)
    if stacked.shape[0] < 2:
        raise ValueError(f"session {session.day_index} has fewer than two time bins")
    return stacked.mean(axis=0), stacked.std(axis=0)


def zscore_by_day(ds: NeuralDataset) -> NeuralDataset:
    """Standardise every channel within each session; flat channels become zeros."""
    stats = {}
    for s in ds.sessions:
        mu, sd = session_moments(s)
        stats[id(s)] = (mu, sd)

    def fn(s, t):
        mu, sd = stats[id(s)]
        safe = np.where(sd > 1e-8, sd, 1.0)
        z = (t.features - mu) / safe
        z[:, sd <= 1e-8] = 0.0
        return z.astype(np.float32)

    out = _map_features(ds, fn)
    out.meta["zscored"] = True
    return out


def detect_dead_channels(ds: NeuralDataset, tol: float = 1e-8) -> list[int]:
    """Channels that never vary across the whole dataset."""
    stacked = np.concatenate([t.features for t in ds.trials()], axis=0)
    return [int(c) for c in np.flatnonzero(stacked.std(axis=0) <= tol)]


def interpolate_dead_channels(ds: NeuralDataset, dead: Sequence[int]) -> NeuralDataset:
    """Replace a single dead channel, bin by bin, with the mean of the live channels."""
    dead = sorted(set(int(c) for c in dead))
    if not dead:
        return ds
    if len(dead) >= 2:
        raise ValueError(
            f"{len(dead)} dead channels {dead}: datasets with two or more dead channels "
            "should be excluded rather than interpolated"
        )
    live = np.setdiff1d(np.arange(ds.channels), dead)

    def fn(s, t):
        f = t.features.copy()
        f[:, dead] = f[:, live].mean(axis=1, keepdims=True)
        return f

    return _map_features(ds, fn)


def augment(
    features: np.ndarray,
    rng: np.random.Generator,
    noise_std: float = 0.2,
    offset_std: float = 0.05,
    smooth_sigma: float = 2.0,
) -> np.ndarray:
    """White noise, a per-channel constant offset, then Gaussian smoothing in time."""
    x = np.asarray(features, dtype=np.float64)
    if noise_std > 0:
        x = x + rng.normal(0.0, noise_std, size=x.shape)
    if offset_std > 0:
        x = x + rng.normal(0.0, offset_std, size=(1, x.shape[1]))
    if smooth_sigma > 0:
        x = smooth_time(x, smooth_sigma)
    return x.astype(np.float32)


def split_dataset(
    ds: NeuralDataset, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[NeuralDataset, NeuralDataset, NeuralDataset]:
    """Trial-level partition, stratified by session, with exact global counts.

    Trials are shuffled inside each session and interleaved round-robin across
    sessions; the interleaved list is then cut at the rounded cumulative
    fractions, so each split draws from every session in proportion.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (3,) or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {list(fractions)}")
    rng = np.random.default_rng(seed)
    queues = []
    for si, s in enumerate(ds.sessions):
        order = rng.permutation(len(s.trials))
        queues.append([(si, int(k)) for k in order])
    interleaved = []
    depth = max((len(q) for q in queues), default=0)
    for i in range(depth):
        for q in queues:
            if i < len(q):
                interleaved.append(q[i])
    n = len(interleaved)
    cuts = np.rint(np.cumsum(fractions) * n).astype(int)
    cuts[-1] = n
    bounds = [0, cuts[0], cuts[1], n]
    parts = []
    for k in range(3):
        chunk = interleaved[bounds[k] : bounds[k + 1]]
        if fractions[k] > 0 and not chunk:
            raise ValueError(f"split {k} is empty for {n} trials with fractions {list(fractions)}")
        members = set(chunk)
        sessions = []
        for si, s in enumerate(ds.sessions):
            kept = [t for ti, t in enumerate(s.trials) if (si, ti) in members]
            if kept:
                sessions.append(Session(s.day_index, kept, s.subject))
        parts.append(ds.with_sessions(sessions))
    return tuple(parts)


def subsample(ds: NeuralDataset, n: int, seed: int = 0) -> NeuralDataset:
    """A stratified subset of ``n`` trials (first split of a two-way partition)."""
    if n >= len(ds):
        return ds
    frac = n / len(ds)
    head, _, rest = split_dataset(ds, (frac, 0.0, 1.0 - frac), seed)
    return head


def trial_list(ds: NeuralDataset) -> list[Trial]:
    return ds.trials()
