"""K-means baseline segmenter (Lloyd iterations, k-means++ init, seeded)."""

from __future__ import annotations

import numpy as np

from .config import KMeansConfig
from .core import LabelMap, PointCloud


def _features(cloud: PointCloud, config: KMeansConfig) -> np.ndarray:
    if config.feature_mode == "xyz":
        return cloud.positions
    if cloud.normals is None:
        raise ValueError("feature_mode 'xyz_normal' requires a cloud with normals")
    return np.hstack([cloud.positions, config.normal_weight * cloud.normals])


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=x.dtype)
    centroids[0] = x[int(rng.integers(n))]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centroids[j] = x[pick]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2


def kmeans_segment(cloud: PointCloud, config: KMeansConfig) -> LabelMap:
    """Cluster the cloud into exactly k non-empty clusters.

    Terminates when the largest centroid shift drops below ``tol`` or after
    ``max_iters`` Lloyd iterations; empty clusters are re-seeded from the point
    farthest from its assigned centroid. Deterministic given ``rng_seed``.
    """
    if cloud.n < config.k:
        raise ValueError(f"need at least k={config.k} points, got {cloud.n}")
    x = _features(cloud, config)
    rng = np.random.default_rng(config.rng_seed)
    centroids = _kmeans_pp_init(x, config.k, rng)

    labels = np.zeros(cloud.n, dtype=np.int64)
    for _ in range(config.max_iters):
        labels, d2 = _assign(x, centroids)
        own = d2[np.arange(cloud.n), labels]
        for c in range(config.k):
            if not (labels == c).any():
                far = int(np.argmax(own))
                centroids[c] = x[far]
                labels[far] = c
                own[far] = 0.0
        new_centroids = np.stack(
            [x[labels == c].mean(axis=0) for c in range(config.k)]
        )
        shift = float(np.abs(new_centroids - centroids).max())
        centroids = new_centroids
        if shift < config.tol:
            break
    labels, _ = _assign(x, centroids)
    for c in range(config.k):
        if not (labels == c).any():
            d2 = ((x - centroids[labels]) ** 2).sum(axis=1)
            far = int(np.argmax(d2))
            labels[far] = c
    return LabelMap(labels)


def inertia(cloud: PointCloud, config: KMeansConfig, labels: LabelMap) -> float:
    """Sum of squared distances from each point to its cluster mean."""
    x = _features(cloud, config)
    total = 0.0
    for c in range(labels.num_clusters):
        pts = x[labels.labels == c]
        total += float(((pts - pts.mean(axis=0)) ** 2).sum())
    return total
