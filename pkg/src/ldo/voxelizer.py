"""Dense occupancy grids with per-voxel local-density weights.

The label grid is a per-voxel majority vote over contained points.  The
weight grid encodes how unevenly each dynamic object's points spread over
its voxels: an object's voxel gets the fraction of that object's points
falling there (fractions sum to 1 per object), added on top of a base
weight of 1.  Static occupied voxels weigh exactly 1, empty voxels 0.

Occupancy file layout (little-endian), sparse over non-empty voxels:
    magic "LDOC" | u32 version=1 | 9 f64 (min, max, voxel_size) | 3 u32 dims |
    u64 nnz | nnz x { u32 linear_index, u16 label, f32 weight }
with linear_index = ((ix * dimY) + iy) * dimZ + iz, ascending.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregation import DenseCloud, build_dense_cloud
from .errors import (
    BadMagic,
    BadVersion,
    InvariantViolation,
    IoFailure,
    TruncatedFile,
)
from .ingest import UNLABELED, SceneSequence

EMPTY = 0

WEIGHT_BASE_PLUS_FACTOR = "BASE_PLUS_FACTOR"
WEIGHT_FACTOR_ONLY = "FACTOR_ONLY"

_OCC_MAGIC = b"LDOC"
_OCC_VERSION = 1
_OCC_HEADER = struct.Struct("<4sI9d3IQ")
_OCC_DTYPE = np.dtype([("index", "<u4"), ("label", "<u2"), ("weight", "<f4")])
assert _OCC_DTYPE.itemsize == 10


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Spatial range and voxel resolution; dims must divide the span exactly."""

    min: np.ndarray
    max: np.ndarray
    voxel_size: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        vs = np.asarray(self.voxel_size, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(np.isfinite(vs))):
            raise InvariantViolation("grid bounds and voxel size must be finite")
        if np.any(hi <= lo):
            raise InvariantViolation(f"grid max {hi.tolist()} must exceed min {lo.tolist()}")
        if np.any(vs <= 0):
            raise InvariantViolation(f"voxel_size must be positive, got {vs.tolist()}")
        ratio = (hi - lo) / vs
        dims = np.rint(ratio)
        if np.any(np.abs(ratio - dims) > 1e-9) or np.any(dims < 1):
            raise InvariantViolation(
                f"grid span must be an integer number of voxels per axis, got {ratio.tolist()}"
            )
        object.__setattr__(self, "min", _freeze(lo))
        object.__setattr__(self, "max", _freeze(hi))
        object.__setattr__(self, "voxel_size", _freeze(vs))
        object.__setattr__(self, "_dims", tuple(int(d) for d in dims))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self._dims  # type: ignore[attr-defined]

    @property
    def voxel_count(self) -> int:
        h, w, z = self.dims
        return h * w * z

    def slice_centers_z(self) -> np.ndarray:
        """Height of each z-slice center, ascending."""
        z = self.dims[2]
        return self.min[2] + (np.arange(z) + 0.5) * self.voxel_size[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (
            np.array_equal(self.min, other.min)
            and np.array_equal(self.max, other.max)
            and np.array_equal(self.voxel_size, other.voxel_size)
        )


def voxel_index(spec: GridSpec, point) -> tuple[int, int, int] | None:
    """Voxel of a single point, or None when outside [min, max) on any axis."""
    p = np.asarray(point, dtype=np.float64).reshape(3)
    idx = np.floor((p - spec.min) / spec.voxel_size).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= np.asarray(spec.dims)):
        return None
    return int(idx[0]), int(idx[1]), int(idx[2])


def voxel_indices(spec: GridSpec, xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized voxel_index: (N, 3) int indices plus an in-grid mask."""
    pts = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    idx = np.floor((pts - spec.min) / spec.voxel_size).astype(np.int64)
    valid = np.all(idx >= 0, axis=1) & np.all(idx < np.asarray(spec.dims), axis=1)
    return idx, valid


def _linearize(spec: GridSpec, idx: np.ndarray) -> np.ndarray:
    _, w, z = spec.dims
    return (idx[:, 0] * w + idx[:, 1]) * z + idx[:, 2]


def _effective_labels(labels: np.ndarray, background_class: int) -> np.ndarray:
    # Label 0 is reserved for empty voxels; unlabeled and zero-labeled points
    # vote for the configured background class instead.
    out = labels.astype(np.int64)
    out[(out == UNLABELED) | (out == EMPTY)] = background_class
    return out


def _vote(
    cloud: DenseCloud, spec: GridSpec, background_class: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-voxel winning label.

    Returns (voxel linear ids, winning labels, winner-is-dynamic flags,
    in-grid point linear ids) with one entry per occupied voxel for the first
    three.  The vote is a count majority per label; on ties, labels backed by
    at least one dynamic point in that voxel beat purely static labels, and
    the smallest class id wins last.
    """
    idx, valid = voxel_indices(spec, cloud.xyz)
    lin_all = np.full(len(cloud), -1, dtype=np.int64)
    if not np.any(valid):
        e = np.zeros(0, dtype=np.int64)
        return e, e.astype(np.uint16), e.astype(bool), lin_all
    lin = _linearize(spec, idx[valid])
    lin_all[valid] = lin
    labels = _effective_labels(cloud.labels[valid], background_class)
    dynamic = cloud.dynamic_mask[valid]

    pair = (lin << np.int64(16)) | labels
    uniq, inverse, counts = np.unique(pair, return_inverse=True, return_counts=True)
    pair_dyn = np.bincount(inverse, weights=dynamic.astype(np.float64)) > 0
    pair_voxel = uniq >> np.int64(16)
    pair_label = (uniq & np.int64(0xFFFF)).astype(np.uint16)

    order = np.lexsort((pair_label, ~pair_dyn, -counts, pair_voxel))
    voxels_sorted = pair_voxel[order]
    first = np.flatnonzero(np.diff(voxels_sorted, prepend=-1))
    winners = order[first]
    return pair_voxel[winners], pair_label[winners], pair_dyn[winners], lin_all


def voxelize_labels(
    cloud: DenseCloud, spec: GridSpec, background_class: int = 1
) -> np.ndarray:
    """Majority-vote semantic label per voxel; voxels without points are EMPTY."""
    voxels, labels, _, _ = _vote(cloud, spec, background_class)
    grid = np.zeros(spec.dims, dtype=np.uint16)
    grid.reshape(-1)[voxels] = labels
    return grid


def object_density_factors(
    cloud: DenseCloud, spec: GridSpec
) -> dict[str, dict[tuple[int, int, int], float]]:
    """Per dynamic object, each occupied voxel's share of the object's points.

    Only in-grid points count; each object's factors sum to 1.  Objects with
    no in-grid points are omitted.
    """
    idx, valid = voxel_indices(spec, cloud.xyz)
    sel = valid & cloud.dynamic_mask
    result: dict[str, dict[tuple[int, int, int], float]] = {}
    if not np.any(sel):
        return result
    lin = _linearize(spec, idx[sel])
    tracks = cloud.track_index[sel].astype(np.int64)
    pair = tracks * np.int64(spec.voxel_count) + lin
    uniq, counts = np.unique(pair, return_counts=True)
    pair_track = uniq // spec.voxel_count
    pair_voxel = uniq % spec.voxel_count
    totals = np.bincount(pair_track, weights=counts, minlength=len(cloud.track_ids))

    _, w, z = spec.dims
    for track, voxel, count in zip(pair_track, pair_voxel, counts):
        tid = cloud.track_ids[int(track)]
        ix, rem = divmod(int(voxel), w * z)
        iy, iz = divmod(rem, z)
        result.setdefault(tid, {})[(ix, iy, iz)] = float(count / totals[track])
    return result


def density_matrix(
    cloud: DenseCloud,
    spec: GridSpec,
    weight_mode: str = WEIGHT_BASE_PLUS_FACTOR,
    background_class: int = 1,
) -> np.ndarray:
    """Per-voxel weights: 0 empty, 1 static occupied, 1 + density factor dynamic.

    The factor of a dynamic voxel comes from the object contributing the most
    points there (ties to the smallest track_id).  A voxel counts as dynamic
    only when the label vote was won by a dynamically-backed label, so the
    weights always agree with voxelize_labels.  ``weight_mode`` FACTOR_ONLY
    drops the base 1 on dynamic voxels.
    """
    if weight_mode not in (WEIGHT_BASE_PLUS_FACTOR, WEIGHT_FACTOR_ONLY):
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    voxels, _, winner_dyn, lin_all = _vote(cloud, spec, background_class)
    weights = np.zeros(spec.voxel_count, dtype=np.float64)
    weights[voxels] = 1.0

    dyn_sel = (lin_all >= 0) & cloud.dynamic_mask
    if np.any(dyn_sel):
        lin = lin_all[dyn_sel]
        tracks = cloud.track_index[dyn_sel].astype(np.int64)
        pair = lin * np.int64(len(cloud.track_ids)) + tracks
        uniq, counts = np.unique(pair, return_counts=True)
        pair_voxel = uniq // len(cloud.track_ids)
        pair_track = uniq % len(cloud.track_ids)
        totals = np.bincount(pair_track, weights=counts, minlength=len(cloud.track_ids))

        # Winning object per voxel: most points, then smallest track id
        # (track indices are assigned in sorted-id order).
        order = np.lexsort((pair_track, -counts, pair_voxel))
        first = np.flatnonzero(np.diff(pair_voxel[order], prepend=-1))
        win = order[first]
        factor = counts[win] / totals[pair_track[win]]

        keep = np.isin(pair_voxel[win], voxels[winner_dyn])
        base = 1.0 if weight_mode == WEIGHT_BASE_PLUS_FACTOR else 0.0
        weights[pair_voxel[win][keep]] = base + factor[keep]

    return weights.reshape(spec.dims).astype(np.float32)


@dataclass(frozen=True, eq=False)
class LdoGrid:
    """Semantic labels plus local-density weights on a shared grid.

    Invariant: a voxel is EMPTY exactly when its weight is 0.
    """

    spec: GridSpec
    labels: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.uint16)
        weights = np.asarray(self.weights, dtype=np.float32)
        if labels.shape != self.spec.dims or weights.shape != self.spec.dims:
            raise InvariantViolation(
                f"grid arrays {labels.shape}/{weights.shape} do not match dims {self.spec.dims}"
            )
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise InvariantViolation("weights must be finite and non-negative")
        empty = labels == EMPTY
        if np.any(weights[empty] != 0.0) or np.any(weights[~empty] == 0.0):
            raise InvariantViolation("EMPTY voxels and zero weights must coincide exactly")
        object.__setattr__(self, "labels", _freeze(labels))
        object.__setattr__(self, "weights", _freeze(weights))

    def __eq__(self, other) -> bool:
        if not isinstance(other, LdoGrid):
            return NotImplemented
        return (
            self.spec == other.spec
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.weights, other.weights)
        )

    @property
    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.labels))


def build_ldo(
    scene: SceneSequence,
    spec: GridSpec,
    margin: float = 0.0,
    weight_mode: str = WEIGHT_BASE_PLUS_FACTOR,
    background_class: int = 1,
    jobs: int = 1,
) -> LdoGrid:
    """End-to-end: aggregate the scene, vote labels, attach density weights."""
    cloud = build_dense_cloud(scene, margin=margin, jobs=jobs)
    return LdoGrid(
        spec=spec,
        labels=voxelize_labels(cloud, spec, background_class),
        weights=density_matrix(cloud, spec, weight_mode, background_class),
    )


def save_occ(path, grid: LdoGrid) -> None:
    """Write the sparse occupancy file; byte-identical for equal grids."""
    flat_labels = grid.labels.reshape(-1)
    flat_weights = grid.weights.reshape(-1)
    nz = np.flatnonzero(flat_labels != EMPTY)
    records = np.empty(len(nz), dtype=_OCC_DTYPE)
    records["index"] = nz
    records["label"] = flat_labels[nz]
    records["weight"] = flat_weights[nz]
    header = _OCC_HEADER.pack(
        _OCC_MAGIC,
        _OCC_VERSION,
        *grid.spec.min,
        *grid.spec.max,
        *grid.spec.voxel_size,
        *grid.spec.dims,
        len(nz),
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(records.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write occupancy file {path}: {exc}") from exc


def load_occ(path) -> LdoGrid:
    """Read an occupancy file back into a dense grid."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read occupancy file {path}: {exc}") from exc
    if len(data) < _OCC_HEADER.size:
        raise TruncatedFile(
            f"{path}: {len(data)} bytes is shorter than the {_OCC_HEADER.size}-byte header"
        )
    fields = _OCC_HEADER.unpack_from(data)
    magic, version = fields[0], fields[1]
    if magic != _OCC_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {_OCC_MAGIC!r}")
    if version != _OCC_VERSION:
        raise BadVersion(f"{path}: version {version} unsupported (expected {_OCC_VERSION})")
    lo, hi, vs = fields[2:5], fields[5:8], fields[8:11]
    dims, nnz = fields[11:14], fields[14]
    spec = GridSpec(np.array(lo), np.array(hi), np.array(vs))
    if spec.dims != tuple(dims):
        raise InvariantViolation(
            f"{path}: stored dims {tuple(dims)} disagree with spec-derived {spec.dims}"
        )
    expected = _OCC_HEADER.size + nnz * _OCC_DTYPE.itemsize
    if len(data) != expected:
        raise TruncatedFile(
            f"{path}: header declares {nnz} records ({expected} bytes) but file has "
            f"{len(data)} bytes"
        )
    records = np.frombuffer(data, dtype=_OCC_DTYPE, count=nnz, offset=_OCC_HEADER.size)
    idx = records["index"].astype(np.int64)
    if len(idx):
        if idx[-1] >= spec.voxel_count or np.any(np.diff(idx) <= 0):
            raise InvariantViolation(f"{path}: record indices not strictly ascending in range")
        if np.any(records["label"] == EMPTY):
            raise InvariantViolation(f"{path}: stored record carries the EMPTY label")
        if not np.all(records["weight"] > 0):
            raise InvariantViolation(f"{path}: stored record carries a non-positive weight")
    labels = np.zeros(spec.voxel_count, dtype=np.uint16)
    weights = np.zeros(spec.voxel_count, dtype=np.float32)
    labels[idx] = records["label"]
    weights[idx] = records["weight"]
    return LdoGrid(spec, labels.reshape(spec.dims), weights.reshape(spec.dims))
