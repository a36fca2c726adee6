"""On-disk scene format: binary point payloads plus a JSON manifest.

Point file layout (little-endian):
    magic "LDOP" | u32 version=1 | u64 record_count |
    record_count x { f32 x, f32 y, f32 z, f32 intensity, u16 label }

Labels use 0xFFFF as the UNLABELED sentinel.  The manifest is JSON with
per-frame entries carrying the point file path, the sensor->world pose
(quaternion wxyz + translation, all f64) and the frame's box annotations
(center/size/yaw in that frame's sensor coordinates).

Round-trips are lossless: coordinates/intensity are stored and kept in
single precision, poses and box geometry in double precision.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    BadVersion,
    InvariantViolation,
    IoFailure,
    MalformedManifest,
    TruncatedFile,
)
from .geometry import OrientedBox, RigidTransform

UNLABELED = 0xFFFF

_POINT_MAGIC = b"LDOP"
_POINT_VERSION = 1
_POINT_HEADER = struct.Struct("<4sIQ")
_POINT_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("intensity", "<f4"), ("label", "<u2")]
)
assert _POINT_DTYPE.itemsize == 18


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointFrame:
    """One LiDAR sweep: float32 coordinates/intensity plus uint16 labels."""

    frame_index: int
    xyz: np.ndarray
    intensity: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        xyz = np.asarray(self.xyz, dtype=np.float32).reshape(-1, 3)
        inten = np.asarray(self.intensity, dtype=np.float32).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.uint16).reshape(-1)
        if self.frame_index < 0:
            raise InvariantViolation(f"frame_index must be non-negative, got {self.frame_index}")
        if len(inten) != len(xyz) or len(labels) != len(xyz):
            raise InvariantViolation(
                f"frame {self.frame_index}: mismatched point attribute lengths "
                f"({len(xyz)} xyz, {len(inten)} intensity, {len(labels)} labels)"
            )
        if not np.all(np.isfinite(xyz)):
            raise InvariantViolation(f"frame {self.frame_index}: non-finite coordinates")
        object.__setattr__(self, "xyz", _freeze(xyz))
        object.__setattr__(self, "intensity", _freeze(inten))
        object.__setattr__(self, "labels", _freeze(labels))

    def __len__(self) -> int:
        return len(self.xyz)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointFrame):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and np.array_equal(self.xyz, other.xyz)
            and np.array_equal(self.intensity, other.intensity)
            and np.array_equal(self.labels, other.labels)
        )


def _check_labels(frame: PointFrame, class_count: int, source: str) -> None:
    bad = (frame.labels >= class_count) & (frame.labels != UNLABELED)
    if np.any(bad):
        first = int(np.flatnonzero(bad)[0])
        raise InvariantViolation(
            f"{source}: frame {frame.frame_index} point {first} has label "
            f"{int(frame.labels[first])} >= class_count {class_count}"
        )


@dataclass(frozen=True, eq=False)
class SceneSequence:
    """Ordered frames with per-frame sensor->world poses and box annotations."""

    scene_id: str
    frames: tuple[PointFrame, ...]
    poses: tuple[RigidTransform, ...]
    boxes: tuple[tuple[OrientedBox, ...], ...]
    target_frame: int
    class_count: int

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        poses = tuple(self.poses)
        boxes = tuple(tuple(b) for b in self.boxes)
        if len(frames) < 1:
            raise InvariantViolation(f"scene {self.scene_id!r}: needs at least one frame")
        if len(poses) != len(frames) or len(boxes) != len(frames):
            raise InvariantViolation(
                f"scene {self.scene_id!r}: {len(frames)} frames but {len(poses)} poses "
                f"and {len(boxes)} box lists"
            )
        if not (0 <= self.target_frame < len(frames)):
            raise InvariantViolation(
                f"scene {self.scene_id!r}: target_frame {self.target_frame} out of range "
                f"for {len(frames)} frames"
            )
        if self.class_count < 2:
            raise InvariantViolation(
                f"scene {self.scene_id!r}: class_count must be >= 2 (empty + one class)"
            )
        track_labels: dict[str, int] = {}
        for fi, (frame, frame_boxes) in enumerate(zip(frames, boxes)):
            _check_labels(frame, self.class_count, f"scene {self.scene_id!r}")
            seen: set[str] = set()
            for box in frame_boxes:
                if box.track_id in seen:
                    raise InvariantViolation(
                        f"scene {self.scene_id!r}: duplicate track {box.track_id!r} in frame {fi}"
                    )
                seen.add(box.track_id)
                if not (1 <= box.label < self.class_count):
                    raise InvariantViolation(
                        f"scene {self.scene_id!r}: box {box.track_id!r} in frame {fi} has "
                        f"label {box.label} outside [1, {self.class_count})"
                    )
                prev = track_labels.setdefault(box.track_id, box.label)
                if prev != box.label:
                    raise InvariantViolation(
                        f"scene {self.scene_id!r}: track {box.track_id!r} labeled {prev} "
                        f"and {box.label} in different frames"
                    )
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "boxes", boxes)

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneSequence):
            return NotImplemented
        if (
            self.scene_id != other.scene_id
            or self.target_frame != other.target_frame
            or self.class_count != other.class_count
            or len(self.frames) != len(other.frames)
        ):
            return False
        for a, b in zip(self.frames, other.frames):
            if a != b:
                return False
        for pa, pb in zip(self.poses, other.poses):
            if not (
                np.array_equal(pa.rotation, pb.rotation)
                and np.array_equal(pa.translation, pb.translation)
            ):
                return False
        for la, lb in zip(self.boxes, other.boxes):
            if len(la) != len(lb):
                return False
            for ba, bb in zip(la, lb):
                if (
                    ba.track_id != bb.track_id
                    or ba.label != bb.label
                    or ba.yaw != bb.yaw
                    or not np.array_equal(ba.center, bb.center)
                    or not np.array_equal(ba.size, bb.size)
                ):
                    return False
        return True


def write_points(path: Path, frame: PointFrame) -> None:
    """Write one frame's points in the binary payload format."""
    records = np.empty(len(frame), dtype=_POINT_DTYPE)
    records["x"] = frame.xyz[:, 0]
    records["y"] = frame.xyz[:, 1]
    records["z"] = frame.xyz[:, 2]
    records["intensity"] = frame.intensity
    records["label"] = frame.labels
    header = _POINT_HEADER.pack(_POINT_MAGIC, _POINT_VERSION, len(frame))
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(records.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write point file {path}: {exc}") from exc


def read_points(path: Path, frame_index: int) -> PointFrame:
    """Read and validate one binary point payload."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read point file {path}: {exc}") from exc
    if len(data) < _POINT_HEADER.size:
        raise TruncatedFile(f"{path}: {len(data)} bytes is shorter than the 16-byte header")
    magic, version, count = _POINT_HEADER.unpack_from(data)
    if magic != _POINT_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {_POINT_MAGIC!r}")
    if version != _POINT_VERSION:
        raise BadVersion(f"{path}: version {version} unsupported (expected {_POINT_VERSION})")
    expected = _POINT_HEADER.size + count * _POINT_DTYPE.itemsize
    if len(data) != expected:
        raise TruncatedFile(
            f"{path}: header declares {count} records ({expected} bytes) but file has "
            f"{len(data)} bytes"
        )
    records = np.frombuffer(data, dtype=_POINT_DTYPE, count=count, offset=_POINT_HEADER.size)
    xyz = np.stack([records["x"], records["y"], records["z"]], axis=1)
    if not np.all(np.isfinite(xyz)):
        raise InvariantViolation(f"{path}: non-finite coordinates in payload")
    return PointFrame(
        frame_index=frame_index,
        xyz=xyz,
        intensity=records["intensity"].copy(),
        labels=records["label"].copy(),
    )


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise MalformedManifest(f"{where}: missing key {key!r}")
    return entry[key]


def _vec(value, n: int, where: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise MalformedManifest(f"{where}: expected a {n}-element array")
    try:
        arr = np.asarray([float(v) for v in value], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise MalformedManifest(f"{where}: non-numeric entry ({exc})") from exc
    if not np.all(np.isfinite(arr)):
        raise MalformedManifest(f"{where}: non-finite entry")
    return arr


def _parse_box(entry, where: str) -> OrientedBox:
    if not isinstance(entry, dict):
        raise MalformedManifest(f"{where}: box entry must be an object")
    track_id = _require(entry, "track_id", where)
    if not isinstance(track_id, str) or not track_id:
        raise MalformedManifest(f"{where}: track_id must be a non-empty string")
    label = _require(entry, "label", where)
    if not isinstance(label, int) or isinstance(label, bool) or not (0 <= label <= 0xFFFF):
        raise MalformedManifest(f"{where}: label must be a u16 integer")
    yaw = _require(entry, "yaw", where)
    if not isinstance(yaw, (int, float)) or isinstance(yaw, bool) or not math.isfinite(yaw):
        raise MalformedManifest(f"{where}: yaw must be a finite number")
    size = _vec(_require(entry, "size", where), 3, f"{where}.size")
    if np.any(size <= 0.0):
        raise MalformedManifest(f"{where}: size must be strictly positive, got {size.tolist()}")
    return OrientedBox(
        center=_vec(_require(entry, "center", where), 3, f"{where}.center"),
        size=size,
        yaw=float(yaw),
        track_id=track_id,
        label=label,
    )


def _parse_pose(entry, where: str) -> RigidTransform:
    if not isinstance(entry, dict):
        raise MalformedManifest(f"{where}: pose must be an object")
    quat = _vec(_require(entry, "quaternion", where), 4, f"{where}.quaternion")
    trans = _vec(_require(entry, "translation", where), 3, f"{where}.translation")
    if np.linalg.norm(quat) < 1e-12:
        raise MalformedManifest(f"{where}: quaternion norm is zero")
    return RigidTransform(quat, trans)


def load_scene(manifest_path) -> SceneSequence:
    """Load and fully validate a scene from its manifest.

    Raises MalformedManifest / BadMagic / BadVersion / TruncatedFile /
    InvariantViolation with the offending file and field named, or IoFailure
    when a file cannot be read at all.
    """
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {manifest_path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise MalformedManifest(f"{manifest_path}: top level must be an object")

    where = str(manifest_path)
    scene_id = _require(doc, "scene_id", where)
    if not isinstance(scene_id, str):
        raise MalformedManifest(f"{where}: scene_id must be a string")
    target_frame = _require(doc, "target_frame", where)
    class_count = _require(doc, "class_count", where)
    for name, val in (("target_frame", target_frame), ("class_count", class_count)):
        if not isinstance(val, int) or isinstance(val, bool) or val < 0:
            raise MalformedManifest(f"{where}: {name} must be a non-negative integer")
    frame_entries = _require(doc, "frames", where)
    if not isinstance(frame_entries, list) or not frame_entries:
        raise MalformedManifest(f"{where}: frames must be a non-empty array")

    frames: list[PointFrame] = []
    poses: list[RigidTransform] = []
    boxes: list[tuple[OrientedBox, ...]] = []
    for i, entry in enumerate(frame_entries):
        fwhere = f"{where}: frames[{i}]"
        if not isinstance(entry, dict):
            raise MalformedManifest(f"{fwhere}: must be an object")
        index = _require(entry, "index", fwhere)
        if not isinstance(index, int) or isinstance(index, bool) or index != i:
            raise MalformedManifest(f"{fwhere}: index must equal position {i}, got {index!r}")
        points_path = _require(entry, "points_path", fwhere)
        if not isinstance(points_path, str):
            raise MalformedManifest(f"{fwhere}: points_path must be a string")
        poses.append(_parse_pose(_require(entry, "pose", fwhere), f"{fwhere}.pose"))
        box_entries = _require(entry, "boxes", fwhere)
        if not isinstance(box_entries, list):
            raise MalformedManifest(f"{fwhere}: boxes must be an array")
        boxes.append(
            tuple(_parse_box(b, f"{fwhere}.boxes[{j}]") for j, b in enumerate(box_entries))
        )
        frames.append(read_points(manifest_path.parent / points_path, frame_index=i))

    return SceneSequence(
        scene_id=scene_id,
        frames=tuple(frames),
        poses=tuple(poses),
        boxes=tuple(boxes),
        target_frame=target_frame,
        class_count=class_count,
    )


def write_scene(scene: SceneSequence, out_dir) -> Path:
    """Write a scene to a directory; returns the manifest path.

    ``load_scene(write_scene(s))`` reproduces ``s`` bit-exactly.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directory {out_dir}: {exc}") from exc

    frame_docs = []
    for i, frame in enumerate(scene.frames):
        points_name = f"points_{i:04d}.ldop"
        write_points(out_dir / points_name, frame)
        pose = scene.poses[i]
        frame_docs.append(
            {
                "index": i,
                "points_path": points_name,
                "pose": {
                    "quaternion": [float(v) for v in pose.rotation],
                    "translation": [float(v) for v in pose.translation],
                },
                "boxes": [
                    {
                        "track_id": b.track_id,
                        "label": b.label,
                        "center": [float(v) for v in b.center],
                        "size": [float(v) for v in b.size],
                        "yaw": float(b.yaw),
                    }
                    for b in scene.boxes[i]
                ],
            }
        )
    doc = {
        "scene_id": scene.scene_id,
        "target_frame": scene.target_frame,
        "class_count": scene.class_count,
        "frames": frame_docs,
    }
    manifest_path = out_dir / "manifest.json"
    try:
        manifest_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {manifest_path}: {exc}") from exc
    return manifest_path


def make_frame(
    frame_index: int,
    xyz: Sequence,
    intensity: Sequence | None = None,
    labels: Sequence | None = None,
) -> PointFrame:
    """Convenience constructor filling in zero intensity / UNLABELED labels."""
    xyz = np.asarray(xyz, dtype=np.float32).reshape(-1, 3)
    n = len(xyz)
    if intensity is None:
        intensity = np.zeros(n, dtype=np.float32)
    if labels is None:
        labels = np.full(n, UNLABELED, dtype=np.uint16)
    return PointFrame(frame_index, xyz, np.asarray(intensity), np.asarray(labels))
