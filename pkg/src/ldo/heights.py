"""Voxel-height statistics and height-interval feature pooling.

Feature volumes are dense float32 arrays laid out [C, Z, H, W]; pooling
collapses the Z axis, either globally or over a height interval of interest.
Slice membership is decided by slice-center height, half-open on the top:
a slice with center c belongs to interval (z_min, z_max) iff
z_min <= c < z_max.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInterval, InvariantViolation, ShapeMismatch
from .voxelizer import EMPTY, GridSpec, LdoGrid

LAYER_BASE = "BL"
LAYER_UNIVERSAL = "UL"
LAYER_EXTENDED = "EFL"
_LAYERS = (LAYER_BASE, LAYER_UNIVERSAL, LAYER_EXTENDED)


@dataclass(frozen=True)
class HeightIntervalSet:
    """Height intervals of interest, each tagged with its sampling layer."""

    intervals: tuple[tuple[float, float], ...]
    layers: tuple[str, ...]

    def __post_init__(self) -> None:
        intervals = tuple((float(a), float(b)) for a, b in self.intervals)
        layers = tuple(self.layers)
        if not intervals:
            raise InvariantViolation("interval list must be non-empty")
        if len(layers) != len(intervals):
            raise InvariantViolation(
                f"{len(intervals)} intervals but {len(layers)} layer tags"
            )
        for lo, hi in intervals:
            if not lo < hi:
                raise InvariantViolation(f"interval [{lo}, {hi}) is empty or inverted")
        for tag in layers:
            if tag not in _LAYERS:
                raise InvariantViolation(f"unknown layer tag {tag!r}")
        object.__setattr__(self, "intervals", intervals)
        object.__setattr__(self, "layers", layers)

    def __len__(self) -> int:
        return len(self.intervals)

    def for_layer(self, tag: str) -> tuple[tuple[float, float], ...]:
        return tuple(iv for iv, t in zip(self.intervals, self.layers) if t == tag)


def default_interval_set() -> HeightIntervalSet:
    """The stock eight intervals, grouped into base/universal/extended layers."""
    return HeightIntervalSet(
        intervals=(
            (-3.0, -2.0),
            (-2.0, -1.0),
            (-1.0, 0.0),
            (0.0, 2.0),
            (-5.0, 3.0),
            (-4.0, 2.0),
            (-6.0, -4.0),
            (-2.0, 1.0),
        ),
        layers=(
            LAYER_BASE,
            LAYER_BASE,
            LAYER_BASE,
            LAYER_BASE,
            LAYER_UNIVERSAL,
            LAYER_EXTENDED,
            LAYER_EXTENDED,
            LAYER_UNIVERSAL,
        ),
    )


def check_feature_grid(data: np.ndarray, rank: int | None = None) -> np.ndarray:
    """Validate a dense float32 feature array (finite, optionally fixed rank)."""
    arr = np.asarray(data)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    if rank is not None and arr.ndim != rank:
        raise ShapeMismatch(f"expected rank-{rank} feature grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvariantViolation("feature grid contains non-finite values")
    return np.ascontiguousarray(arr)


def height_histogram(grid: LdoGrid, bin_size: float = 0.5) -> np.ndarray:
    """Occupied-voxel counts per height bin spanning the grid's z-range."""
    if bin_size <= 0:
        raise ValueError(f"bin_size must be positive, got {bin_size}")
    z_min = float(grid.spec.min[2])
    z_max = float(grid.spec.max[2])
    n_bins = int(np.ceil((z_max - z_min) / bin_size - 1e-12))
    counts = np.zeros(n_bins, dtype=np.int64)
    occupied_per_slice = np.count_nonzero(
        grid.labels.reshape(-1, grid.spec.dims[2]) != EMPTY, axis=0
    )
    centers = grid.spec.slice_centers_z()
    bins = np.floor((centers - z_min) / bin_size).astype(np.int64)
    np.add.at(counts, np.clip(bins, 0, n_bins - 1), occupied_per_slice)
    return counts


def histogram_edges(grid_spec: GridSpec, bin_size: float = 0.5) -> np.ndarray:
    z_min = float(grid_spec.min[2])
    z_max = float(grid_spec.max[2])
    n_bins = int(np.ceil((z_max - z_min) / bin_size - 1e-12))
    return z_min + np.arange(n_bins + 1) * bin_size


def slices_in_interval(spec: GridSpec, interval: tuple[float, float]) -> np.ndarray:
    """Indices of z-slices whose centers fall in [z_min, z_max)."""
    z_lo, z_hi = float(interval[0]), float(interval[1])
    if not z_lo < z_hi:
        raise ValueError(f"interval [{z_lo}, {z_hi}) is empty or inverted")
    centers = spec.slice_centers_z()
    return np.flatnonzero((centers >= z_lo) & (centers < z_hi))


def vhs_pool(
    f_v: np.ndarray,
    interval: tuple[float, float],
    spec: GridSpec,
    reduce: str = "sum",
) -> np.ndarray:
    """Collapse a [C, Z, H, W] volume over one height interval to [C, H, W].

    Slices outside the grid's z-range simply do not exist and contribute
    nothing.  Raises EmptyInterval when no slice center falls in the interval.
    """
    vol = check_feature_grid(f_v, rank=4)
    if vol.shape[1] != spec.dims[2]:
        raise ShapeMismatch(
            f"feature volume has {vol.shape[1]} z-slices but grid expects {spec.dims[2]}"
        )
    sel = slices_in_interval(spec, interval)
    if len(sel) == 0:
        raise EmptyInterval(
            f"no slice center of {spec.dims[2]} slices falls in [{interval[0]}, {interval[1]})"
        )
    picked = vol[:, sel]
    if reduce == "sum":
        return picked.sum(axis=1)
    if reduce == "mean":
        return picked.mean(axis=1)
    if reduce == "max":
        return picked.max(axis=1)
    raise ValueError(f"unknown reduce {reduce!r}")


def global_pool(f_v: np.ndarray, reduce: str = "sum") -> np.ndarray:
    """Collapse a [C, Z, H, W] volume over the whole height axis to [C, H, W]."""
    vol = check_feature_grid(f_v, rank=4)
    if reduce == "sum":
        return vol.sum(axis=1)
    if reduce == "mean":
        return vol.mean(axis=1)
    if reduce == "max":
        return vol.max(axis=1)
    raise ValueError(f"unknown reduce {reduce!r}")


@dataclass(frozen=True)
class AggregationParams:
    """Two-pathway channel-reduction parameters for pooled height features.

    Path 1 is a 1x1 projection (per-pixel linear map) from L*C' to C'
    channels; path 2 is the same-shaped linear map followed by a 3x3
    convolution with zero padding.
    """

    path1_weight: np.ndarray  # (L*C', C')
    path1_bias: np.ndarray  # (C',)
    path2_weight: np.ndarray  # (L*C', C')
    path2_bias: np.ndarray  # (C',)
    conv_weight: np.ndarray  # (C', C', 3, 3)
    conv_bias: np.ndarray  # (C',)

    def __post_init__(self) -> None:
        for name in ("path1_weight", "path1_bias", "path2_weight", "path2_bias",
                     "conv_weight", "conv_bias"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise InvariantViolation(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        c_out = self.path1_weight.shape[1]
        if (
            self.path1_bias.shape != (c_out,)
            or self.path2_weight.shape != self.path1_weight.shape
            or self.path2_bias.shape != (c_out,)
            or self.conv_weight.shape != (c_out, c_out, 3, 3)
            or self.conv_bias.shape != (c_out,)
        ):
            raise ShapeMismatch("aggregation parameter shapes are inconsistent")

    @property
    def channels_out(self) -> int:
        return self.path1_weight.shape[1]


def conv2d_3x3(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation with stride 1 and zero padding 1.

    ``x`` is [C_in, H, W]; ``weight`` is [C_out, C_in, 3, 3].  Computed in
    float64.
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeMismatch(f"conv2d_3x3 got x {x.shape}, weight {weight.shape}")
    if weight.shape[1] != x.shape[0] or bias.shape != (weight.shape[0],):
        raise ShapeMismatch(
            f"conv weight {weight.shape} / bias {bias.shape} do not fit input {x.shape}"
        )
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    return np.einsum("ihwkl,oikl->ohw", windows, weight) + bias[:, None, None]


def vhs_aggregate(pooled: Sequence[np.ndarray], params: AggregationParams) -> np.ndarray:
    """Fuse L pooled [C', H', W'] maps into one via the two summed pathways."""
    if not pooled:
        raise ShapeMismatch("need at least one pooled feature map")
    maps = [np.asarray(p, dtype=np.float64) for p in pooled]
    shape = maps[0].shape
    for m in maps:
        if m.ndim != 3 or m.shape != shape:
            raise ShapeMismatch(f"pooled maps disagree in shape: {m.shape} vs {shape}")
    stacked = np.concatenate(maps, axis=0)  # (L*C', H', W')
    if stacked.shape[0] != params.path1_weight.shape[0]:
        raise ShapeMismatch(
            f"{stacked.shape[0]} stacked channels but parameters expect "
            f"{params.path1_weight.shape[0]}"
        )
    path1 = np.einsum("dhw,dc->chw", stacked, params.path1_weight)
    path1 += params.path1_bias[:, None, None]
    path2 = np.einsum("dhw,dc->chw", stacked, params.path2_weight)
    path2 += params.path2_bias[:, None, None]
    path2 = conv2d_3x3(path2, params.conv_weight, params.conv_bias)
    return (path1 + path2).astype(np.float32)
