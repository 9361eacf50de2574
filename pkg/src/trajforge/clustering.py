"""Seeded spherical k-means.

Hand-rolled rather than delegated to a library because the pipeline
promises byte-for-byte reproducible cluster assignments for a given
seed, and that guarantee is easiest to keep when the whole algorithm is
~60 lines of plain numpy: k-means++ initialization from a seeded
generator, Lloyd iterations with cosine assignment on L2-normalized
vectors, a fixed iteration cap, and a relative centroid-shift stopping
tolerance.
"""

from __future__ import annotations

import numpy as np

STOP_TOL = 1e-6


def l2_normalize(points: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(points, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return points / norms


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=points.dtype)
    first = int(rng.integers(n))
    centers[0] = points[first]
    # squared Euclidean on unit vectors is a monotone transform of cosine distance
    dist_sq = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = float(dist_sq.sum())
        if total <= 0.0:
            # all remaining points coincide with picked centers; spread over indices
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(dist_sq), r))
            idx = min(idx, n - 1)
        centers[i] = points[idx]
        dist_sq = np.minimum(dist_sq, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


def spherical_kmeans(
    points: np.ndarray, k: int, seed: int, max_iters: int = 100
) -> np.ndarray:
    """Cluster unit-normalized rows into at most k groups.

    Returns dense labels in [0, m) with m <= k: clusters that end up
    empty are dropped and the survivors renumbered in centroid order,
    so every returned label owns at least one point.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = points.shape[0]
    if n < k:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    pts = l2_normalize(np.asarray(points, dtype=np.float64))
    if k == 1:
        return np.zeros(n, dtype=np.int64)

    rng = np.random.Generator(np.random.PCG64(seed))
    centers = _kmeans_pp_init(pts, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        # cosine similarity assignment; argmax takes the first maximum, so ties are stable
        sims = pts @ centers.T
        labels = np.argmax(sims, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = pts[labels == j]
            if len(members) == 0:
                continue
            mean = members.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 0.0:
                new_centers[j] = mean / norm
        shift = np.linalg.norm(new_centers - centers)
        scale = max(np.linalg.norm(centers), 1e-12)
        centers = new_centers
        if shift / scale < STOP_TOL:
            break

    # renumber non-empty clusters densely, preserving centroid order
    present = np.unique(labels)
    remap = {int(old): new for new, old in enumerate(present.tolist())}
    return np.array([remap[int(l)] for l in labels], dtype=np.int64)
