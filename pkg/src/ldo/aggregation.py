"""Dense-cloud construction from multi-frame scenes.

Per frame, points are split into static background and per-object dynamic
groups using the frame's box annotations.  Static points are accumulated in
world coordinates across all frames and mapped back into the target frame's
sensor coordinates.  Dynamic points are overlaid per object in box-canonical
coordinates (translate by -center, rotate by -yaw of that frame's box) and
re-placed with the target frame's box, which keeps moving objects sharp no
matter how far they travel between frames.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InvariantViolation
from .geometry import OrientedBox, apply, invert, points_in_box
from .ingest import PointFrame, SceneSequence

PROVENANCE_STATIC = -1


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class LabeledPoints:
    """Column bundle for a set of labeled points (float64 coordinates)."""

    xyz: np.ndarray
    intensity: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        inten = np.asarray(self.intensity, dtype=np.float32).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.uint16).reshape(-1)
        if len(inten) != len(xyz) or len(labels) != len(xyz):
            raise InvariantViolation("mismatched point attribute lengths")
        object.__setattr__(self, "xyz", _freeze(xyz))
        object.__setattr__(self, "intensity", _freeze(inten))
        object.__setattr__(self, "labels", _freeze(labels))

    def __len__(self) -> int:
        return len(self.xyz)

    @staticmethod
    def empty() -> "LabeledPoints":
        return LabeledPoints(np.zeros((0, 3)), np.zeros(0), np.zeros(0))

    @staticmethod
    def concat(parts: Sequence["LabeledPoints"]) -> "LabeledPoints":
        if not parts:
            return LabeledPoints.empty()
        return LabeledPoints(
            np.concatenate([p.xyz for p in parts], axis=0),
            np.concatenate([p.intensity for p in parts]),
            np.concatenate([p.labels for p in parts]),
        )


@dataclass(frozen=True)
class SplitFrame:
    """One frame partitioned into static points and per-track dynamic groups."""

    static_points: LabeledPoints
    dynamic_groups: Mapping[str, LabeledPoints]

    def __post_init__(self) -> None:
        for track_id, group in self.dynamic_groups.items():
            if len(group) == 0:
                raise InvariantViolation(f"dynamic group {track_id!r} is empty")


@dataclass(frozen=True, eq=False)
class DenseCloud:
    """Aggregated points in target-frame sensor coordinates with provenance.

    ``track_index[i]`` is -1 for static points, otherwise an index into
    ``track_ids`` identifying the dynamic object the point belongs to.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    labels: np.ndarray
    track_index: np.ndarray
    track_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        inten = np.asarray(self.intensity, dtype=np.float32).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.uint16).reshape(-1)
        tidx = np.asarray(self.track_index, dtype=np.int32).reshape(-1)
        n = len(xyz)
        if len(inten) != n or len(labels) != n or len(tidx) != n:
            raise InvariantViolation("mismatched dense-cloud column lengths")
        if not np.all(np.isfinite(xyz)):
            raise InvariantViolation("dense cloud has non-finite coordinates")
        if n and (tidx.min() < PROVENANCE_STATIC or tidx.max() >= len(self.track_ids)):
            raise InvariantViolation("track_index out of range")
        object.__setattr__(self, "xyz", _freeze(xyz))
        object.__setattr__(self, "intensity", _freeze(inten))
        object.__setattr__(self, "labels", _freeze(labels))
        object.__setattr__(self, "track_index", _freeze(tidx))
        object.__setattr__(self, "track_ids", tuple(self.track_ids))

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def dynamic_mask(self) -> np.ndarray:
        return self.track_index != PROVENANCE_STATIC


def split_semantic(
    frame: PointFrame, boxes: Sequence[OrientedBox], margin: float = 0.0
) -> SplitFrame:
    """Partition a frame's points into static background and per-box groups.

    A point inside at least one box goes to the box with the nearest center
    (ties to the lexicographically smallest track_id) and takes that box's
    label; everything else stays static with its own point label.
    """
    xyz = frame.xyz.astype(np.float64)
    n = len(frame)
    ordered = sorted(boxes, key=lambda b: b.track_id)
    if not ordered or n == 0:
        return SplitFrame(
            static_points=LabeledPoints(xyz, frame.intensity, frame.labels),
            dynamic_groups={},
        )

    # Distance to each containing box's center; inf where not contained, so
    # argmin over the track-sorted box axis realizes both tie-break rules.
    dist = np.full((len(ordered), n), np.inf)
    for bi, box in enumerate(ordered):
        inside = points_in_box(xyz, box, margin)
        if np.any(inside):
            d = np.linalg.norm(xyz[inside] - box.center, axis=1)
            dist[bi, inside] = d
    assignment = np.argmin(dist, axis=0)
    contained = np.isfinite(dist[assignment, np.arange(n)])

    static_mask = ~contained
    groups: dict[str, LabeledPoints] = {}
    for bi, box in enumerate(ordered):
        sel = contained & (assignment == bi)
        if np.any(sel):
            groups[box.track_id] = LabeledPoints(
                xyz[sel],
                frame.intensity[sel],
                np.full(int(sel.sum()), box.label, dtype=np.uint16),
            )
    return SplitFrame(
        static_points=LabeledPoints(
            xyz[static_mask], frame.intensity[static_mask], frame.labels[static_mask]
        ),
        dynamic_groups=groups,
    )


def _split_all(scene: SceneSequence, margin: float, jobs: int) -> list[SplitFrame]:
    if jobs > 1 and len(scene) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(
                pool.map(
                    split_semantic, scene.frames, scene.boxes, [margin] * len(scene)
                )
            )
    return [
        split_semantic(frame, boxes, margin)
        for frame, boxes in zip(scene.frames, scene.boxes)
    ]


def aggregate_static(
    scene: SceneSequence,
    margin: float = 0.0,
    splits: Sequence[SplitFrame] | None = None,
) -> LabeledPoints:
    """Accumulate every frame's static points in the target sensor frame.

    Each frame's static points go to world coordinates via that frame's pose;
    the concatenation over frames is mapped back with the inverse target pose.
    """
    if splits is None:
        splits = _split_all(scene, margin, jobs=1)
    to_target = invert(scene.poses[scene.target_frame])
    parts = []
    for pose, split in zip(scene.poses, splits):
        static = split.static_points
        if len(static) == 0:
            parts.append(static)
            continue
        world = apply(pose, static.xyz)
        parts.append(LabeledPoints(apply(to_target, world), static.intensity, static.labels))
    return LabeledPoints.concat(parts)


def aggregate_dynamic(
    scene: SceneSequence,
    margin: float = 0.0,
    splits: Sequence[SplitFrame] | None = None,
) -> dict[str, LabeledPoints]:
    """Overlay each target-frame object's points from all of its observations.

    Points are stacked in box-canonical coordinates (each frame's own box)
    and re-placed with the target frame's box; tracks without a target-frame
    annotation are dropped.  Keys come out in sorted track order.
    """
    if splits is None:
        splits = _split_all(scene, margin, jobs=1)
    target_boxes = {box.track_id: box for box in scene.boxes[scene.target_frame]}
    box_by_frame: list[dict[str, OrientedBox]] = [
        {box.track_id: box for box in frame_boxes} for frame_boxes in scene.boxes
    ]

    result: dict[str, LabeledPoints] = {}
    for track_id in sorted(target_boxes):
        parts = []
        for fi, split in enumerate(splits):
            group = split.dynamic_groups.get(track_id)
            if group is None:
                continue
            box = box_by_frame[fi][track_id]
            canonical = (group.xyz - box.center) @ _rot_z(-box.yaw).T
            parts.append(LabeledPoints(canonical, group.intensity, group.labels))
        if not parts:
            continue
        merged = LabeledPoints.concat(parts)
        target = target_boxes[track_id]
        placed = merged.xyz @ _rot_z(target.yaw).T + target.center
        result[track_id] = LabeledPoints(placed, merged.intensity, merged.labels)
    return result


def build_dense_cloud(
    scene: SceneSequence, margin: float = 0.0, jobs: int = 1
) -> DenseCloud:
    """Full aggregation: split every frame, merge static and dynamic parts.

    Output order is deterministic: static points by (frame, original index),
    then dynamic points by (track_id, frame, original index).
    """
    splits = _split_all(scene, margin, jobs)
    static = aggregate_static(scene, margin, splits=splits)
    dynamic = aggregate_dynamic(scene, margin, splits=splits)

    track_ids = tuple(dynamic.keys())
    parts = [static] + list(dynamic.values())
    merged = LabeledPoints.concat(parts)
    track_index = np.concatenate(
        [np.full(len(static), PROVENANCE_STATIC, dtype=np.int32)]
        + [
            np.full(len(group), ti, dtype=np.int32)
            for ti, group in enumerate(dynamic.values())
        ]
    ) if len(merged) else np.zeros(0, dtype=np.int32)
    return DenseCloud(
        xyz=merged.xyz,
        intensity=merged.intensity,
        labels=merged.labels,
        track_index=track_index,
        track_ids=track_ids,
    )
