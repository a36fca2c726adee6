"""Thin binding layer over the occupancy core for ML pipelines.

Exposes the end-to-end grid builder, occupancy file I/O, height pooling and
grid evaluation behind a small array-first surface.  Label and weight
payloads are never copied on reads: ``BoundGrid`` hands out read-only numpy
views into the core grid it owns, and mutation APIs are deliberately absent.

Core error classes are distinct exception types already; they are re-exported
here so callers can catch them without importing the core package.
"""
from __future__ import annotations

import numpy as np

import ldo
from ldo.cli import PipelineConfig, load_config
from ldo.errors import (
    BadMagic,
    BadVersion,
    ConfigError,
    DimMismatch,
    EmptyInterval,
    InvariantViolation,
    IoFailure,
    LabelOutOfRange,
    LdoError,
    MalformedManifest,
    ShapeMismatch,
    TruncatedFile,
)
from ldo.heights import global_pool
from ldo.voxelizer import GridSpec, LdoGrid

__version__ = "0.1.0"

__all__ = [
    "BoundGrid",
    "GridSpec",
    "build_ldo",
    "evaluate",
    "global_pool",
    "grid_spec",
    "load_occ",
    "save_occ",
    "vhs_pool",
    # error types (re-exported core classes)
    "LdoError",
    "MalformedManifest",
    "BadMagic",
    "BadVersion",
    "TruncatedFile",
    "InvariantViolation",
    "IoFailure",
    "ConfigError",
    "DimMismatch",
    "LabelOutOfRange",
    "EmptyInterval",
    "ShapeMismatch",
]


def _readonly_view(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.setflags(write=False)
    return view


class BoundGrid:
    """Read-only handle over a built occupancy grid.

    ``labels`` and ``weights`` are zero-copy views into the owned core grid
    (the views keep the handle's storage alive, so they can be passed around
    freely).
    """

    __slots__ = ("_grid",)

    def __init__(self, grid: LdoGrid):
        if not isinstance(grid, LdoGrid):
            raise TypeError(f"expected a core grid, got {type(grid).__name__}")
        self._grid = grid

    @property
    def grid(self) -> LdoGrid:
        """The owned core grid object."""
        return self._grid

    @property
    def dims(self) -> tuple[int, int, int]:
        return self._grid.spec.dims

    @property
    def spec(self) -> GridSpec:
        return self._grid.spec

    @property
    def labels(self) -> np.ndarray:
        return _readonly_view(self._grid.labels)

    @property
    def weights(self) -> np.ndarray:
        return _readonly_view(self._grid.weights)

    def __repr__(self) -> str:
        return f"BoundGrid(dims={self.dims}, occupied={self._grid.occupied_count})"


def grid_spec(min_corner, max_corner, voxel_size) -> GridSpec:
    """Construct a validated grid specification from plain arrays."""
    return GridSpec(
        np.asarray(min_corner, dtype=np.float64),
        np.asarray(max_corner, dtype=np.float64),
        np.asarray(voxel_size, dtype=np.float64),
    )


def build_ldo(manifest_path, config_path=None) -> BoundGrid:
    """Run the full pipeline on an on-disk scene.

    ``config_path`` points at the same JSON config the CLI takes; omitted, the
    stock configuration is used.  Raises the core's typed exceptions
    (MalformedManifest, InvariantViolation, IoFailure, ...) unchanged.
    """
    cfg = load_config(config_path) if config_path is not None else PipelineConfig()
    scene = ldo.load_scene(manifest_path)
    grid = ldo.build_ldo(
        scene,
        cfg.grid,
        margin=cfg.margin,
        weight_mode=cfg.weight_mode,
        background_class=cfg.background_class,
    )
    return BoundGrid(grid)


def load_occ(path) -> BoundGrid:
    """Read an occupancy file into a read-only grid handle."""
    return BoundGrid(ldo.load_occ(path))


def save_occ(path, grid) -> None:
    """Write a grid handle (or a bare core grid) to an occupancy file."""
    core = grid.grid if isinstance(grid, BoundGrid) else grid
    ldo.save_occ(path, core)


def vhs_pool(volume, interval, spec: GridSpec, reduce: str = "sum") -> np.ndarray:
    """Pool a [C, Z, H, W] feature volume over one height interval."""
    return ldo.vhs_pool(volume, (float(interval[0]), float(interval[1])), spec, reduce)


def evaluate(pred, gt, class_count: int) -> dict:
    """Score two label grids; returns a plain mapping.

    Keys: ``sc_iou``, ``ssc_miou`` and ``per_class_iou`` (class id -> IoU or
    None for classes absent from both grids).
    """
    report = ldo.evaluate(np.asarray(pred), np.asarray(gt), class_count)
    return {
        "sc_iou": report.sc_iou,
        "ssc_miou": report.ssc_miou,
        "per_class_iou": dict(report.per_class_iou),
    }
