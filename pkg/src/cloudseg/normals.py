"""Per-point normal estimation by local plane fitting.

Each point's normal is the eigenvector of the smallest eigenvalue of the
covariance of its k-neighborhood (the point itself included). The curvature
value is the surface-variation ratio lambda_min / (lambda_0+lambda_1+lambda_2),
which is ~0 on planes and is used to order region-growing seeds.

Orientation is centroid-outward: simple, deterministic, and adequate for the
roughly star-shaped scans this pipeline targets; swap in something smarter if
your data needs it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import PointCloud
from .spatial import SpatialIndex

DEFAULT_NORMAL_K = 25


@dataclass(frozen=True)
class NormalEstimate:
    normal: np.ndarray
    curvature: float


def fit_normal_arrays(
    positions: np.ndarray, neighbors: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array-level plane fit: (normals, curvatures, degenerate mask)."""
    normals, curvature, degenerate = _kernels.plane_fit(
        np.ascontiguousarray(positions, dtype=np.float64),
        np.ascontiguousarray(neighbors, dtype=np.int64),
    )
    return normals, curvature, degenerate


def estimate_normals(
    cloud: PointCloud, index: SpatialIndex, k: int = DEFAULT_NORMAL_K
) -> list[NormalEstimate]:
    """Estimate one unit normal + curvature per point from the k-neighborhood."""
    if cloud.n < 3:
        raise ValueError("normal estimation needs at least 3 points")
    if k < 2:
        raise ValueError("k must be >= 2")
    neighbors, _ = index.knn_all(k)
    normals, curvature, degenerate = fit_normal_arrays(cloud.positions, neighbors)
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} degenerate (coincident) neighborhoods; "
            "emitted normal (0, 0, 1) with curvature 0 for those points",
            stacklevel=2,
        )
    return [NormalEstimate(normals[i], float(curvature[i])) for i in range(cloud.n)]


def _normals_as_array(normals) -> np.ndarray:
    if isinstance(normals, np.ndarray):
        return np.array(normals, dtype=np.float64)
    return np.array([est.normal for est in normals], dtype=np.float64)


def orient_normals(cloud: PointCloud, normals) -> np.ndarray:
    """Flip normals to point away from the cloud centroid (zero-dot left alone)."""
    arr = _normals_as_array(normals)
    offsets = cloud.positions - cloud.positions.mean(axis=0)
    dots = np.einsum("ij,ij->i", arr, offsets)
    sign = np.where(dots < 0.0, -1.0, 1.0)
    return arr * sign[:, None]


def ensure_normals(
    cloud: PointCloud, index: SpatialIndex | None = None, k: int = DEFAULT_NORMAL_K
) -> PointCloud:
    """Return the cloud unchanged if it has normals, else estimate + orient."""
    if cloud.normals is not None:
        return cloud
    if index is None:
        from .spatial import build

        index = build(cloud)
    neighbors, _ = index.knn_all(k)
    normals, _, degenerate = fit_normal_arrays(cloud.positions, neighbors)
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} degenerate neighborhoods during normal estimation",
            stacklevel=2,
        )
    return cloud.with_normals(orient_normals(cloud, normals))
