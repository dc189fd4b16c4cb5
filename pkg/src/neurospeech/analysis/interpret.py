"""Representation analyses: segment pooling, RSA, PCA, Fisher LDA, embedding distances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np


def segment_sizes(length: int, n_segments: int = 10) -> list[int]:
    """Near-equal contiguous sizes; the remainder goes to the leading segments."""
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if length < n_segments:
        raise ValueError(f"sequence of {length} tokens is shorter than {n_segments} segments")
    base, extra = divmod(length, n_segments)
    return [base + 1] * extra + [base] * (n_segments - extra)


def segmented_pool(tokens: np.ndarray, n_segments: int = 10) -> np.ndarray:
    """(L, D) -> (n_segments * D,) by averaging each contiguous segment."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2:
        raise ValueError(f"expected (L, D) tokens, got shape {tokens.shape}")
    bounds = np.cumsum([0, *segment_sizes(tokens.shape[0], n_segments)])
    return np.concatenate([tokens[a:b].mean(axis=0) for a, b in zip(bounds[:-1], bounds[1:])])


def rdm(vectors: np.ndarray) -> np.ndarray:
    """Representational dissimilarity: 1 - cosine similarity, exact zeros on the diagonal."""
    x = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cosine dissimilarity is undefined for zero vectors")
    u = x / norms
    d = 1.0 - u @ u.T
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 2.0)


def rsa_score(neural: np.ndarray, text: np.ndarray) -> float:
    """Pearson r between the strict upper triangles of the two RDMs."""
    neural, text = np.asarray(neural), np.asarray(text)
    if len(neural) != len(text):
        raise ValueError("neural and text vectors must describe the same sentences")
    if len(neural) < 3:
        raise ValueError("RSA needs at least 3 sentences")
    iu = np.triu_indices(len(neural), k=1)
    a, b = rdm(neural)[iu], rdm(text)[iu]
    a, b = a - a.mean(), b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if den == 0:
        raise ValueError("an RDM triangle has zero variance; correlation undefined")
    return float(np.clip((a * b).sum() / den, -1.0, 1.0))


@dataclass
class PCAResult:
    mean: np.ndarray
    components: np.ndarray  # (k, D), orthonormal rows
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    projections: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z) @ self.components + self.mean


def pca_project(vectors: np.ndarray, k: int = 2) -> PCAResult:
    """SVD-based PCA on centred data.

    Each component is sign-flipped so its largest-magnitude coordinate is positive.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < k:
        raise ValueError(f"need at least k={k} samples")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol = s.max(initial=0.0) * max(x.shape) * np.finfo(float).eps
    rank = int((s > tol).sum())
    if k > rank:
        raise ValueError(f"k={k} exceeds the data rank {rank}")
    comps = vt[:k].copy()
    flip = np.sign(comps[np.arange(k), np.abs(comps).argmax(axis=1)])
    comps *= flip[:, None]
    var = s**2 / max(x.shape[0] - 1, 1)
    return PCAResult(mean, comps, var[:k], var[:k] / var.sum(), xc @ comps.T)


def lda_axis(features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Unit Fisher direction S_w^-1 (mu_1 - mu_0) with ridge 1e-6 * trace(S_w) / d.

    The sign is chosen so class 1 projects above class 0.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    if len(classes) != 2:
        raise ValueError(f"need exactly two classes, got {len(classes)}")
    x0, x1 = x[y == classes[0]], x[y == classes[1]]
    if len(x0) < 2 or len(x1) < 2:
        raise ValueError("each class needs at least 2 samples")
    mu0, mu1 = x0.mean(axis=0), x1.mean(axis=0)
    diff = mu1 - mu0
    if not np.any(diff):
        raise ValueError("class means coincide; the discriminant direction is undefined")
    sw = (x0 - mu0).T @ (x0 - mu0) + (x1 - mu1).T @ (x1 - mu1)
    d = x.shape[1]
    sw = sw + 1e-6 * np.trace(sw) / d * np.eye(d)
    try:
        w = np.linalg.solve(sw, diff)
    except np.linalg.LinAlgError as exc:
        raise ValueError("within-class scatter is singular even after ridge regularisation") from exc
    return w / np.linalg.norm(w)


def word_distance(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]):
    """Euclidean distance per word present in both maps, plus the words skipped."""
    shared = sorted(set(a) & set(b))
    skipped = sorted(set(a) ^ set(b))
    dist = {w: float(np.linalg.norm(np.asarray(a[w], dtype=np.float64) - np.asarray(b[w], dtype=np.float64))) for w in shared}
    return dist, skipped


def word_embeddings(latents, frame_words, transcripts) -> dict[str, np.ndarray]:
    """Average latent frames per word across time and trials.

    ``frame_words[i][t]`` is the index into ``transcripts[i]`` that frame t of
    trial i belongs to, or -1 for silence/blank.
    """
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for lat, fw, words in zip(latents, frame_words, transcripts):
        lat = np.asarray(lat, dtype=np.float64)
        for t, k in enumerate(fw):
            if k < 0:
                continue
            w = words[k]
            sums[w] = sums.get(w, 0.0) + lat[t]
            counts[w] = counts.get(w, 0) + 1
    return {w: sums[w] / counts[w] for w in sorted(sums)}
