"""Superpoint refinement and the per-cloud self-training loop.

Superpoints are deliberately over-segmented regions (tight growing
thresholds: 10 degrees, 1.5x spacing) used to smooth predicted labels: every
point in a superpoint is replaced by the superpoint's most frequent predicted
label. Training alternates gradient steps against pseudo-labels with periodic
refinement of those pseudo-labels, anchored to the pre-segmentation so a good
coarse result is never destroyed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, PipelineConfig, SrgConfig
from .core import LabelMap, PointCloud, canonicalize_labels, validate
from .gnn import SGD, SegModel, cross_entropy_loss, forward
from .normals import ensure_normals
from .spatial import SpatialIndex, build
from .srg import MissingNormalsError, grow_regions, srg_segment

SUPERPOINT_NORMAL_DEG = 20.0
SUPERPOINT_EUCLID_FACTOR = 2.2


@dataclass(frozen=True)
class Superpoints:
    """Disjoint groups of point indices covering the whole cloud."""

    groups: tuple[np.ndarray, ...]
    point_count: int

    def __post_init__(self) -> None:
        seen = np.concatenate(self.groups) if self.groups else np.empty(0, np.int64)
        if seen.shape[0] != self.point_count or (
            np.unique(seen).shape[0] != self.point_count
        ):
            raise ValueError("superpoint groups must partition all point indices")

    @staticmethod
    def from_labels(labels: np.ndarray) -> "Superpoints":
        labels = np.asarray(labels)
        order = np.argsort(labels, kind="stable")
        boundaries = np.flatnonzero(np.diff(labels[order])) + 1
        groups = tuple(np.split(order, boundaries))
        return Superpoints(groups=groups, point_count=labels.shape[0])

    def __len__(self) -> int:
        return len(self.groups)


@dataclass
class TrainRecord:
    iteration: int
    loss: float
    num_labels: int


def extract_superpoints(
    cloud: PointCloud, index: SpatialIndex | None = None, k: int = 25
) -> Superpoints:
    """Over-segment the cloud with tight region-growing thresholds."""
    if cloud.n == 1:
        return Superpoints(groups=(np.array([0], dtype=np.int64),), point_count=1)
    if cloud.normals is None:
        raise MissingNormalsError("superpoint extraction requires normals")
    if index is None:
        index = build(cloud)
    config = SrgConfig(
        normal_threshold_deg=SUPERPOINT_NORMAL_DEG,
        euclid_threshold_factor=SUPERPOINT_EUCLID_FACTOR,
        knn_k=min(k, cloud.n - 1),
        min_region_size=1,
    )
    labels = grow_regions(cloud, index, config)
    return Superpoints.from_labels(labels.labels)


def refine_label_array(predicted: np.ndarray, superpoints: Superpoints) -> np.ndarray:
    """Replace labels inside each superpoint by its modal label (ties: lowest)."""
    predicted = np.asarray(predicted, dtype=np.int64)
    if predicted.shape[0] != superpoints.point_count:
        raise ValueError(
            f"labels length {predicted.shape[0]} != superpoint point count "
            f"{superpoints.point_count}"
        )
    out = np.empty_like(predicted)
    for group in superpoints.groups:
        counts = np.bincount(predicted[group])
        out[group] = int(np.argmax(counts))
    return out


def refine_labels(predicted: LabelMap, superpoints: Superpoints) -> LabelMap:
    """LabelMap-facing wrapper around :func:`refine_label_array`.

    Label values are preserved; if modal replacement empties a class the
    result is renumbered canonically to keep the label range dense.
    """
    refined = refine_label_array(predicted.labels, superpoints)
    present = np.unique(refined)
    if present.shape[0] != int(refined.max()) + 1:
        refined = canonicalize_labels(refined)
    return LabelMap(refined)


def _blend_targets(
    refined: np.ndarray, srg_labels: np.ndarray, superpoints: Superpoints
) -> np.ndarray:
    """Adopt the refined prediction on superpoints where it agrees with the
    pre-segmentation on at least half the points; keep the SRG label elsewhere."""
    targets = srg_labels.copy()
    for group in superpoints.groups:
        label = refined[group[0]]
        agree = int((srg_labels[group] == label).sum())
        if 2 * agree >= group.shape[0]:
            targets[group] = label
    return targets


def self_train(
    cloud: PointCloud,
    config: PipelineConfig,
    model_config: ModelConfig | None = None,
) -> tuple[LabelMap, SegModel, list[TrainRecord]]:
    """Pre-segment, then alternate network training and label refinement.

    Returns the refined final labels, the trained model, and one record per
    iteration (loss against the current targets, distinct predicted labels).
    Deterministic given ``config.rng_seed``.
    """
    problems = validate(cloud)
    if problems:
        raise ValueError(f"invalid cloud: {problems[0].message}")
    q = config.target_parts
    if config.train.num_classes != q:
        raise ValueError(
            f"train.num_classes {config.train.num_classes} != target_parts {q}"
        )
    if cloud.n < q:
        raise ValueError(f"need at least {q} points, got {cloud.n}")

    index = build(cloud)
    cloud = ensure_normals(cloud, index, k=config.normals_k)
    srg_map = srg_segment(
        cloud,
        config.srg,
        q,
        config.rng_seed,
        index=index,
        normals_k=config.normals_k,
    )
    srg_labels = srg_map.labels.copy()
    superpoints = extract_superpoints(cloud, index, k=config.knn_k_superpoint)

    if model_config is None:
        model_config = ModelConfig(knn_k_graph=config.knn_k_graph, num_classes=q)
    elif model_config.num_classes != q:
        raise ValueError("model_config.num_classes must equal target_parts")
    model = SegModel.init(model_config, rng_seed=config.rng_seed)
    optimizer = SGD(model.parameters(), lr=config.train.lr, momentum=config.train.momentum)
    coord_neighbors, _ = index.knn_all(model_config.knn_k_graph)

    targets = srg_labels.copy()
    history: list[TrainRecord] = []
    predicted = targets
    for t in range(1, config.train.iterations + 1):
        logits, _ = forward(model, cloud, coord_neighbors=coord_neighbors)
        loss = cross_entropy_loss(logits, targets)
        model.zero_grad()
        loss.backward()
        optimizer.step()
        predicted = np.argmax(logits.data, axis=1)
        history.append(
            TrainRecord(
                iteration=t,
                loss=loss.item(),
                num_labels=int(np.unique(predicted).shape[0]),
            )
        )
        if t % config.train.refine_every == 0:
            refined = refine_label_array(predicted, superpoints)
            targets = _blend_targets(refined, srg_labels, superpoints)

    final = refine_label_array(predicted, superpoints)
    return LabelMap(canonicalize_labels(final)), model, history
