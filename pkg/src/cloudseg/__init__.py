"""Unsupervised part segmentation of 3D point clouds.

Pipeline: estimate normals from coordinates, pre-segment with seed region
growing, self-train a dynamic-graph network against the coarse labels, and
smooth the prediction over superpoints. Ships a k-means baseline, matched
mIoU/OA evaluation, synthetic labeled shapes, and PLY/OBJ/XYZ ingestion.
"""

__version__ = "0.1.0"

from ._kernels import NUMBA_ENABLED
from .config import (
    KMeansConfig,
    ModelConfig,
    PipelineConfig,
    SrgConfig,
    TrainConfig,
    config_from_flat,
    config_to_flat,
)
from .core import (
    LabelMap,
    PointCloud,
    Violation,
    canonicalize_labels,
    relabel_canonical,
    validate,
)
from .io_formats import (
    LabeledCloud,
    downsample_uniform,
    read_cloud,
    write_labeled_ply,
)
from .kmeans import kmeans_segment
from .metrics import (
    EvalReport,
    confusion,
    evaluate,
    matched_miou,
    overall_accuracy,
    time_segmentation,
)
from .normals import NormalEstimate, ensure_normals, estimate_normals, orient_normals
from .refine import (
    Superpoints,
    extract_superpoints,
    refine_labels,
    self_train,
)
from .spatial import SpatialIndex, build, knn_brute_force
from .srg import grow_regions, mean_nn_spacing, reduce_to_k, srg_segment
from .synthetic import make_synthetic

__all__ = [
    "EvalReport",
    "KMeansConfig",
    "LabelMap",
    "LabeledCloud",
    "ModelConfig",
    "NUMBA_ENABLED",
    "NormalEstimate",
    "PipelineConfig",
    "PointCloud",
    "SpatialIndex",
    "SrgConfig",
    "Superpoints",
    "TrainConfig",
    "Violation",
    "build",
    "canonicalize_labels",
    "config_from_flat",
    "config_to_flat",
    "confusion",
    "downsample_uniform",
    "ensure_normals",
    "estimate_normals",
    "evaluate",
    "extract_superpoints",
    "grow_regions",
    "kmeans_segment",
    "knn_brute_force",
    "make_synthetic",
    "matched_miou",
    "mean_nn_spacing",
    "orient_normals",
    "overall_accuracy",
    "read_cloud",
    "reduce_to_k",
    "refine_labels",
    "relabel_canonical",
    "self_train",
    "srg_segment",
    "time_segmentation",
    "validate",
    "write_labeled_ply",
]
