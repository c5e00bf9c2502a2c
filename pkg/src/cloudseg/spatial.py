"""Exact k-nearest-neighbor queries over a point cloud.

Backed by :class:`scipy.spatial.cKDTree` for candidate retrieval, with
post-processing that makes results exact and deterministic: neighbors are
sorted by ascending Euclidean distance with ties broken by ascending point
index, and distances are recomputed with the same arithmetic the brute-force
oracle uses so the two routes agree bitwise.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .core import PointCloud


def _distances_from(positions: np.ndarray, query: np.ndarray) -> np.ndarray:
    # single shared formula so tree-backed and brute-force routes round identically
    diff = positions - query
    return np.sqrt((diff * diff).sum(axis=1))


class SpatialIndex:
    """Immutable KNN index over a cloud's positions (read-only after build)."""

    def __init__(self, positions: np.ndarray):
        if positions.shape[0] < 2:
            raise ValueError("spatial index requires at least 2 points")
        self._positions = positions
        self._tree = cKDTree(positions)

    @property
    def point_count(self) -> int:
        return self._positions.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self._positions

    def _careful_row(self, i: int, k_eff: int) -> tuple[np.ndarray, np.ndarray]:
        """Tie-exact query: ball search out to the k-th distance, then sort."""
        n = self.point_count
        query = self._positions[i]
        dists_incl_self, _ = self._tree.query(query, k=min(k_eff + 1, n))
        radius = float(np.max(dists_incl_self)) * (1.0 + 1e-9) + 1e-300
        cand = np.asarray(self._tree.query_ball_point(query, radius), dtype=np.int64)
        cand = cand[cand != i]
        dist = _distances_from(self._positions[cand], query)
        order = np.lexsort((cand, dist))[:k_eff]
        return cand[order], dist[order]

    def knn(self, query_point_index: int, k: int) -> list[tuple[int, float]]:
        """The min(k, N-1) nearest neighbors of a cloud point, self excluded."""
        n = self.point_count
        if not 0 <= query_point_index < n:
            raise IndexError(f"query index {query_point_index} out of range [0, {n})")
        if k < 1:
            raise ValueError("k must be >= 1")
        idx, dist = self._careful_row(query_point_index, min(k, n - 1))
        return [(int(j), float(d)) for j, d in zip(idx, dist)]

    def knn_all(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Neighbor indices and distances for every point at once.

        Fast path queries k+2 candidates per point and keeps rows whose
        boundary is unambiguous; rows with exact distance ties at the cut (or
        where duplicates hide the query point) are redone with the careful
        per-point query. Returns int64 (N, k_eff) and float64 (N, k_eff).
        """
        n = self.point_count
        if k < 1:
            raise ValueError("k must be >= 1")
        k_eff = min(k, n - 1)
        kq = min(k_eff + 2, n)
        _, cand = self._tree.query(self._positions, k=kq)
        cand = cand.astype(np.int64)

        rows = np.arange(n, dtype=np.int64)
        diff = self._positions[cand] - self._positions[:, None, :]
        dist = np.sqrt((diff * diff).sum(axis=2))

        # drop self from each row; rows where self never appears are suspect
        is_self = cand == rows[:, None]
        has_self = is_self.any(axis=1)
        # push self to the end of each row, then cut it off
        big = np.where(is_self, np.inf, dist)
        sort_slots = np.lexsort((cand, big), axis=-1)
        cand = np.take_along_axis(cand, sort_slots, axis=1)[:, : kq - 1]
        dist = np.take_along_axis(big, sort_slots, axis=1)[:, : kq - 1]

        out_idx = cand[:, :k_eff].copy()
        out_dist = dist[:, :k_eff].copy()

        suspect = ~has_self
        if kq - 1 > k_eff:
            suspect |= dist[:, k_eff - 1] >= dist[:, k_eff]
        for i in np.flatnonzero(suspect):
            idx_row, dist_row = self._careful_row(int(i), k_eff)
            out_idx[i] = idx_row
            out_dist[i] = dist_row
        return out_idx, out_dist


def build(cloud: PointCloud) -> SpatialIndex:
    """Build the KNN index; requires N >= 2 so neighbors exist."""
    return SpatialIndex(cloud.positions)


def knn_brute_force(
    cloud: PointCloud, query_point_index: int, k: int
) -> list[tuple[int, float]]:
    """Exhaustive-scan oracle with the same contract as :meth:`SpatialIndex.knn`."""
    n = cloud.n
    if not 0 <= query_point_index < n:
        raise IndexError(f"query index {query_point_index} out of range [0, {n})")
    if k < 1:
        raise ValueError("k must be >= 1")
    dist = _distances_from(cloud.positions, cloud.positions[query_point_index])
    idx = np.arange(n, dtype=np.int64)
    keep = idx != query_point_index
    idx, dist = idx[keep], dist[keep]
    order = np.lexsort((idx, dist))[: min(k, n - 1)]
    return [(int(j), float(d)) for j, d in zip(idx[order], dist[order])]
