"""Configuration dataclasses shared across the pipeline, plus flat JSON I/O."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class SrgConfig:
    """Thresholds and neighborhood size for seed region growing."""

    normal_threshold_deg: float = 15.0
    euclid_threshold_factor: float = 2.5
    knn_k: int = 25
    min_region_size: int = 20

    def __post_init__(self) -> None:
        if not 0.0 < self.normal_threshold_deg <= 90.0:
            raise ValueError("normal_threshold_deg must be in (0, 90]")
        if self.euclid_threshold_factor <= 0.0:
            raise ValueError("euclid_threshold_factor must be positive")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.min_region_size < 1:
            raise ValueError("min_region_size must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    """Self-training loop parameters (SGD with classical momentum)."""

    iterations: int = 300
    lr: float = 0.005
    momentum: float = 0.1
    num_classes: int = 6
    refine_every: int = 50

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.refine_every < 1:
            raise ValueError("refine_every must be >= 1")


@dataclass(frozen=True)
class KMeansConfig:
    """Plain k-means baseline settings."""

    k: int = 6
    max_iters: int = 100
    tol: float = 1e-7
    feature_mode: str = "xyz"  # "xyz" or "xyz_normal"
    normal_weight: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0.0:
            raise ValueError("tol must be >= 0")
        if self.feature_mode not in ("xyz", "xyz_normal"):
            raise ValueError("feature_mode must be 'xyz' or 'xyz_normal'")
        if self.normal_weight < 0.0:
            raise ValueError("normal_weight must be >= 0")


@dataclass(frozen=True)
class ModelConfig:
    """Network widths. Edge widths and the 512 bottleneck follow the usual
    dynamic-graph conventions; everything is overridable for small test nets."""

    knn_k_graph: int = 20
    num_classes: int = 6
    edge_widths: tuple[int, ...] = (64, 64, 64)
    extract_mlp1: tuple[int, ...] = (64, 64, 64)
    extract_graph: tuple[int, ...] = (64, 64)
    extract_mlp2: tuple[int, ...] = (64, 128, 512)
    seg_hidden: tuple[int, ...] = (512, 256)
    leaky_slope: float = 0.2
    dtype: str = "float32"

    @property
    def bottleneck(self) -> int:
        return self.extract_mlp2[-1]


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a full segmentation run needs, resolved and serializable."""

    knn_k_graph: int = 20
    knn_k_superpoint: int = 25
    normals_k: int = 25
    target_parts: int = 6
    rng_seed: int = 0
    srg: SrgConfig = field(default_factory=SrgConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if self.target_parts < 2:
            raise ValueError("target_parts must be >= 2")
        if self.knn_k_graph < 1 or self.knn_k_superpoint < 1:
            raise ValueError("knn sizes must be >= 1")
        if self.normals_k < 2:
            raise ValueError("normals_k must be >= 2")


_SRG_PREFIX = "srg_"
_TRAIN_PREFIX = "train_"


def config_to_flat(config: PipelineConfig) -> dict[str, Any]:
    """Flatten a PipelineConfig to a single-level key/value dict."""
    flat: dict[str, Any] = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.name == "srg":
            for sf in dataclasses.fields(value):
                flat[_SRG_PREFIX + sf.name] = getattr(value, sf.name)
        elif f.name == "train":
            for tf in dataclasses.fields(value):
                flat[_TRAIN_PREFIX + tf.name] = getattr(value, tf.name)
        else:
            flat[f.name] = value
    return flat


def config_from_flat(flat: dict[str, Any]) -> PipelineConfig:
    """Inverse of :func:`config_to_flat`; unknown keys are rejected."""
    top: dict[str, Any] = {}
    srg_kwargs: dict[str, Any] = {}
    train_kwargs: dict[str, Any] = {}
    top_names = {f.name for f in dataclasses.fields(PipelineConfig)} - {"srg", "train"}
    srg_names = {f.name for f in dataclasses.fields(SrgConfig)}
    train_names = {f.name for f in dataclasses.fields(TrainConfig)}
    for key, value in flat.items():
        if key in top_names:
            top[key] = value
        elif key.startswith(_SRG_PREFIX) and key[len(_SRG_PREFIX):] in srg_names:
            srg_kwargs[key[len(_SRG_PREFIX):]] = value
        elif key.startswith(_TRAIN_PREFIX) and key[len(_TRAIN_PREFIX):] in train_names:
            train_kwargs[key[len(_TRAIN_PREFIX):]] = value
        else:
            raise KeyError(f"unknown config key: {key!r}")
    return PipelineConfig(
        srg=SrgConfig(**srg_kwargs), train=TrainConfig(**train_kwargs), **top
    )
