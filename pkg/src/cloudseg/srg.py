"""Seed-region-growing pre-segmentation.

Regions grow breadth-first from low-curvature seeds: a frontier point's
neighbor joins when it is unassigned, within the Euclidean threshold of the
frontier point, and its normal deviates from the frontier point's normal by
at most the angle threshold. The region count is then reduced (or raised) to
an exact target by adjacency-guided merging and 2-means splitting.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .config import SrgConfig
from .core import LabelMap, PointCloud, canonicalize_labels, relabel_canonical
from .normals import DEFAULT_NORMAL_K, ensure_normals, fit_normal_arrays
from .spatial import SpatialIndex, build


class MissingNormalsError(ValueError):
    pass


def mean_nn_spacing(cloud: PointCloud, index: SpatialIndex) -> float:
    """Mean distance from each point to its single nearest neighbor."""
    _, dist = index.knn_all(1)
    return float(dist[:, 0].mean())


def grow_regions(
    cloud: PointCloud,
    index: SpatialIndex,
    config: SrgConfig,
    rng_seed: int = 0,
) -> LabelMap:
    """Grow normal-consistent, spatially continuous regions over the cloud.

    Fully deterministic: seeds are taken in ascending curvature order (ties by
    point index), so ``rng_seed`` is accepted only for interface stability.
    """
    if cloud.normals is None:
        raise MissingNormalsError("grow_regions requires a cloud with oriented normals")
    neighbors, dists = index.knn_all(config.knn_k)
    spacing = float(dists[:, 0].mean())
    dist_max = config.euclid_threshold_factor * spacing
    cos_min = float(np.cos(np.radians(config.normal_threshold_deg)))
    _, curvature, _ = fit_normal_arrays(cloud.positions, neighbors)
    seed_order = np.argsort(curvature, kind="stable").astype(np.int64)
    labels = _kernels.grow_labels(
        neighbors,
        np.ascontiguousarray(dists),
        np.ascontiguousarray(cloud.normals, dtype=np.float64),
        seed_order,
        cos_min,
        dist_max,
    )
    return LabelMap(labels)


def _region_stats(labels: np.ndarray, positions: np.ndarray):
    ids = np.unique(labels)
    sizes = {int(r): int((labels == r).sum()) for r in ids}
    centroids = {int(r): positions[labels == r].mean(axis=0) for r in ids}
    return ids, sizes, centroids


def _cross_adjacency(labels: np.ndarray, neighbors: np.ndarray, region: int):
    """Count of KNN edges between ``region`` and every other region."""
    mask = labels == region
    counts: dict[int, int] = {}
    out_nb = labels[neighbors[mask]]
    for r, c in zip(*np.unique(out_nb[out_nb != region], return_counts=True)):
        counts[int(r)] = counts.get(int(r), 0) + int(c)
    in_rows = labels[neighbors] == region
    in_src = np.broadcast_to(labels[:, None], neighbors.shape)[in_rows]
    for r, c in zip(*np.unique(in_src[in_src != region], return_counts=True)):
        counts[int(r)] = counts.get(int(r), 0) + int(c)
    return counts


def _merge_smallest(labels, positions, neighbors, only_below: int | None = None) -> bool:
    """Merge the smallest (optionally: smallest under a size cap) region into
    its most-adjacent region. Returns False when no eligible region exists."""
    ids, sizes, centroids = _region_stats(labels, positions)
    if ids.shape[0] < 2:
        return False
    candidates = sorted(sizes, key=lambda r: (sizes[r], r))
    if only_below is not None:
        candidates = [r for r in candidates if sizes[r] < only_below]
        if not candidates:
            return False
    victim = candidates[0]
    adjacency = _cross_adjacency(labels, neighbors, victim)
    best = None
    for r in sizes:
        if r == victim:
            continue
        count = adjacency.get(r, 0)
        cdist = float(np.linalg.norm(centroids[r] - centroids[victim]))
        key = (-count, cdist, r)
        if best is None or key < best[0]:
            best = (key, r)
    labels[labels == victim] = best[1]
    return True


def _split_two_means(points: np.ndarray) -> np.ndarray:
    """Deterministic 2-means on positions: principal-axis extremes seed Lloyd."""
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[0]
    c = np.stack([points[int(np.argmin(proj))], points[int(np.argmax(proj))]])
    if np.allclose(c[0], c[1]):
        half = np.zeros(len(points), dtype=np.int64)
        half[len(points) // 2 :] = 1
        return half
    assign = np.zeros(len(points), dtype=np.int64)
    for _ in range(100):
        d2 = ((points[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        for side in (0, 1):
            if not (new_assign == side).any():
                far = int(np.argmax(d2[np.arange(len(points)), new_assign]))
                new_assign[far] = side
        new_c = np.stack([points[new_assign == side].mean(axis=0) for side in (0, 1)])
        done = np.array_equal(new_assign, assign)
        assign, c = new_assign, new_c
        if done:
            break
    return assign


def reduce_to_k(
    cloud: PointCloud,
    labels: LabelMap,
    index: SpatialIndex,
    target_parts: int,
    min_region_size: int = 1,
    knn_k: int = 25,
) -> LabelMap:
    """Merge or split regions until exactly ``target_parts`` remain.

    Undersized regions (below ``min_region_size``) are absorbed first, never
    dropping below the target count. Merging folds the smallest region into
    the region it shares the most KNN edges with (ties: nearer centroid, then
    lower label); splitting applies 2-means to the largest region.
    """
    if target_parts > cloud.n:
        raise ValueError(f"target_parts {target_parts} exceeds point count {cloud.n}")
    if target_parts < 1:
        raise ValueError("target_parts must be >= 1")
    arr = labels.labels.astype(np.int64).copy()
    neighbors, _ = index.knn_all(knn_k)

    def count() -> int:
        return int(np.unique(arr).shape[0])

    while count() > target_parts and _merge_smallest(
        arr, cloud.positions, neighbors, only_below=min_region_size
    ):
        pass
    while count() > target_parts:
        _merge_smallest(arr, cloud.positions, neighbors)
    while count() < target_parts:
        ids, sizes, _ = _region_stats(arr, cloud.positions)
        largest = max(sizes, key=lambda r: (sizes[r], -r))
        mask = arr == largest
        halves = _split_two_means(cloud.positions[mask])
        fresh = int(arr.max()) + 1
        sub = arr[mask]
        sub[halves == 1] = fresh
        arr[mask] = sub
    return LabelMap(canonicalize_labels(arr))


def srg_segment(
    cloud: PointCloud,
    config: SrgConfig,
    target_parts: int,
    rng_seed: int = 0,
    index: SpatialIndex | None = None,
    normals_k: int = DEFAULT_NORMAL_K,
) -> LabelMap:
    """Full pre-segmentation: grow regions, reduce to the target part count."""
    if index is None:
        index = build(cloud)
    cloud = ensure_normals(cloud, index, k=normals_k)
    grown = grow_regions(cloud, index, config, rng_seed)
    reduced = reduce_to_k(
        cloud,
        grown,
        index,
        target_parts,
        min_region_size=config.min_region_size,
        knn_k=config.knn_k,
    )
    return relabel_canonical(reduced)
