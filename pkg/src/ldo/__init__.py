"""Local-density-aware dense occupancy tooling.

Aggregates multi-frame LiDAR scenes into dense semantic occupancy grids with
per-voxel point-density weights, plus reference implementations of
height-interval feature pooling, global-local feature fusion, the
channel-to-height reshape, a density-weighted occupancy loss, and occupancy
metrics.
"""
from . import errors
from .aggregation import (
    DenseCloud,
    LabeledPoints,
    SplitFrame,
    aggregate_dynamic,
    aggregate_static,
    build_dense_cloud,
    split_semantic,
)
from .fusion import (
    ContextParams,
    FusionParams,
    c2h,
    cff_fuse,
    context_distill,
    gate_alpha,
    h2c,
    load_tensors,
    save_tensors,
    weighted_occ_loss,
)
from .geometry import OrientedBox, RigidTransform, apply, compose, invert, points_in_box
from .heights import (
    AggregationParams,
    HeightIntervalSet,
    default_interval_set,
    global_pool,
    height_histogram,
    vhs_aggregate,
    vhs_pool,
)
from .ingest import UNLABELED, PointFrame, SceneSequence, load_scene, write_scene
from .metrics import OccEvalReport, evaluate
from .voxelizer import (
    EMPTY,
    GridSpec,
    LdoGrid,
    WEIGHT_BASE_PLUS_FACTOR,
    WEIGHT_FACTOR_ONLY,
    build_ldo,
    density_matrix,
    load_occ,
    object_density_factors,
    save_occ,
    voxel_index,
    voxelize_labels,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationParams",
    "ContextParams",
    "DenseCloud",
    "EMPTY",
    "FusionParams",
    "GridSpec",
    "HeightIntervalSet",
    "LabeledPoints",
    "LdoGrid",
    "OccEvalReport",
    "OrientedBox",
    "PointFrame",
    "RigidTransform",
    "SceneSequence",
    "SplitFrame",
    "UNLABELED",
    "WEIGHT_BASE_PLUS_FACTOR",
    "WEIGHT_FACTOR_ONLY",
    "aggregate_dynamic",
    "aggregate_static",
    "apply",
    "build_dense_cloud",
    "build_ldo",
    "c2h",
    "cff_fuse",
    "compose",
    "context_distill",
    "default_interval_set",
    "density_matrix",
    "errors",
    "evaluate",
    "gate_alpha",
    "global_pool",
    "h2c",
    "height_histogram",
    "invert",
    "load_occ",
    "load_scene",
    "load_tensors",
    "object_density_factors",
    "points_in_box",
    "save_occ",
    "save_tensors",
    "split_semantic",
    "vhs_aggregate",
    "vhs_pool",
    "voxel_index",
    "voxelize_labels",
    "weighted_occ_loss",
    "write_scene",
]
