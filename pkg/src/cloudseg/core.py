"""Core immutable data types: point clouds and per-point label maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

NORMAL_NORM_TOL = 1e-6


def _as_locked_array(values, shape_hint: str, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{shape_hint} must have shape (N, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{shape_hint} must contain at least one point")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PointCloud:
    """N points with positions and optional unit normals.

    Positions are stored as float64 and frozen after construction, so a cloud
    can be shared freely across workers. Finiteness and normal-norm invariants
    are checked by :func:`validate`, not by the constructor.
    """

    positions: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions", _as_locked_array(self.positions, "positions"))
        if self.normals is not None:
            normals = _as_locked_array(self.normals, "normals")
            if normals.shape[0] != self.positions.shape[0]:
                raise ValueError(
                    f"normals length {normals.shape[0]} != positions length "
                    f"{self.positions.shape[0]}"
                )
            object.__setattr__(self, "normals", normals)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def with_normals(self, normals) -> "PointCloud":
        return PointCloud(self.positions, normals)


@dataclass(frozen=True)
class LabelMap:
    """Dense per-point cluster assignment: values cover [0, num_clusters)."""

    labels: np.ndarray
    num_clusters: int = -1

    def __post_init__(self) -> None:
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if labels.ndim != 1 or labels.shape[0] < 1:
            raise ValueError("labels must be a non-empty 1-D sequence")
        if labels.min() < 0:
            raise ValueError("labels must be non-negative")
        present = np.unique(labels)
        num = int(labels.max()) + 1
        if present.shape[0] != num:
            missing = sorted(set(range(num)) - set(present.tolist()))
            raise ValueError(f"labels must be dense in [0, {num}); missing {missing}")
        if self.num_clusters not in (-1, num):
            raise ValueError(
                f"num_clusters {self.num_clusters} inconsistent with labels (expected {num})"
            )
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_clusters", num)

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by :func:`validate`."""

    point_index: Optional[int]
    message: str


def validate(cloud: PointCloud) -> list[Violation]:
    """Report every cloud invariant violation; an empty list means valid."""
    report: list[Violation] = []
    finite = np.isfinite(cloud.positions).all(axis=1)
    for idx in np.flatnonzero(~finite):
        report.append(Violation(int(idx), f"position at index {idx} is not finite"))
    if cloud.normals is not None:
        norms = np.linalg.norm(cloud.normals, axis=1)
        bad = np.abs(norms - 1.0) > NORMAL_NORM_TOL
        bad |= ~np.isfinite(norms)
        for idx in np.flatnonzero(bad):
            report.append(
                Violation(
                    int(idx),
                    f"normal at index {idx} has norm {norms[idx]:.9g}, expected 1",
                )
            )
    return report


def canonicalize_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber label values so they appear in first-occurrence order from 0."""
    labels = np.asarray(labels)
    _, first_index, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first_index, kind="stable"), kind="stable")
    return rank[inverse].astype(np.int64)


def relabel_canonical(labels: LabelMap) -> LabelMap:
    """Same partition, labels renumbered in order of first occurrence."""
    return LabelMap(canonicalize_labels(labels.labels))
