"""Rigid-body transforms and oriented-box membership tests.

All types are immutable after construction and all operations are pure, so
everything here is safe to share across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_TWO_PI = 2.0 * math.pi


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle to (-pi, pi]. Values already in range are returned bit-exact."""
    yaw = float(yaw)
    if not math.isfinite(yaw):
        raise ValueError(f"yaw must be finite, got {yaw!r}")
    if -math.pi < yaw <= math.pi:
        return yaw
    wrapped = (yaw + math.pi) % _TWO_PI - math.pi
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix for a unit quaternion in (w, x, y, z) order."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion, wxyz) followed by a translation, in meters.

    The quaternion is renormalized on construction unless it is already unit
    to within 1e-12, which keeps serialization round-trips bit-exact.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(q)) or not np.all(np.isfinite(t)):
            raise ValueError("transform components must be finite")
        norm = float(np.linalg.norm(q))
        if norm < 1e-12:
            raise ValueError("quaternion norm too small to normalize")
        if abs(norm - 1.0) > 1e-12:
            q = q / norm
        object.__setattr__(self, "rotation", _freeze(q))
        object.__setattr__(self, "translation", _freeze(t))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation about +z by ``yaw`` radians, then translation."""
        half = 0.5 * float(yaw)
        return RigidTransform(
            np.array([math.cos(half), 0.0, 0.0, math.sin(half)]),
            np.asarray(translation, dtype=np.float64),
        )

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying ``b`` first and ``a`` second."""
    return RigidTransform(
        _quat_mul(a.rotation, b.rotation),
        a.matrix @ b.translation + a.translation,
    )


def invert(t: RigidTransform) -> RigidTransform:
    q_inv = t.rotation * np.array([1.0, -1.0, -1.0, -1.0])
    return RigidTransform(q_inv, -(quat_to_matrix(q_inv) @ t.translation))


def apply(t: RigidTransform, points: np.ndarray) -> np.ndarray:
    """Rotate then translate an (N, 3) array of points."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    return pts @ t.matrix.T + t.translation


@dataclass(frozen=True)
class OrientedBox:
    """Axis-aligned box in its own canonical frame, placed by center + z-yaw.

    ``size`` is (length, width, height) along the canonical x, y, z axes.
    """

    center: np.ndarray
    size: np.ndarray
    yaw: float
    track_id: str
    label: int

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        s = np.asarray(self.size, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(s)):
            raise ValueError(f"box {self.track_id!r}: center/size must be finite")
        if np.any(s <= 0.0):
            raise ValueError(f"box {self.track_id!r}: size must be strictly positive, got {s}")
        object.__setattr__(self, "center", _freeze(c))
        object.__setattr__(self, "size", _freeze(s))
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))
        object.__setattr__(self, "label", int(self.label))


def points_in_box(points: np.ndarray, box: OrientedBox, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside the box, dilated by ``margin`` per axis.

    A point is inside when its box-canonical coordinates lie within
    ±(size/2 + margin) on every axis; the boundary is closed.
    """
    if margin < 0.0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros(len(pts), dtype=bool)
    local = pts - box.center
    c, s = math.cos(-box.yaw), math.sin(-box.yaw)
    x = c * local[:, 0] - s * local[:, 1]
    y = s * local[:, 0] + c * local[:, 1]
    half = box.size / 2.0 + margin
    return (
        (np.abs(x) <= half[0])
        & (np.abs(y) <= half[1])
        & (np.abs(local[:, 2]) <= half[2])
    )


def transform_box(t: RigidTransform, box: OrientedBox) -> OrientedBox:
    """Re-express a box under a yaw-plus-translation rigid transform.

    Only transforms whose rotation is about +z keep a yaw-only box exact;
    anything else is rejected.
    """
    q = box_yaw_of(t)
    return OrientedBox(
        center=apply(t, box.center[None, :])[0],
        size=box.size,
        yaw=normalize_yaw(box.yaw + q),
        track_id=box.track_id,
        label=box.label,
    )


def box_yaw_of(t: RigidTransform) -> float:
    """Yaw angle of a transform whose rotation axis is +z."""
    w, x, y, z = t.rotation
    if abs(x) > 1e-9 or abs(y) > 1e-9:
        raise ValueError("transform rotation is not about +z")
    return math.atan2(2.0 * w * z, 1.0 - 2.0 * z * z)
