"""Shared builders for synthetic scenes used across the test suite."""
import math

import numpy as np
import pytest

from ldo.geometry import OrientedBox, RigidTransform
from ldo.ingest import PointFrame, SceneSequence, UNLABELED


def random_transform(rng, max_translation=10.0):
    quat = rng.normal(size=4)
    quat /= np.linalg.norm(quat)
    return RigidTransform(quat, rng.uniform(-max_translation, max_translation, size=3))


def random_yaw_transform(rng, max_translation=10.0):
    return RigidTransform.from_yaw(
        rng.uniform(-math.pi, math.pi), rng.uniform(-max_translation, max_translation, size=3)
    )


def place_in_box(rng, box: OrientedBox, n: int, shrink=0.45) -> np.ndarray:
    """Sample n points strictly inside a box (canonical frame, then placed)."""
    canonical = rng.uniform(-shrink, shrink, size=(n, 3)) * box.size
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return canonical @ rot.T + box.center


def build_scene(
    rng,
    n_frames=3,
    n_static=120,
    n_tracks=2,
    points_per_track=25,
    class_count=8,
    extent=18.0,
    z_range=(-4.0, 2.5),
    target_frame=None,
    unlabeled_fraction=0.0,
    scene_id="test-scene",
):
    """Random but well-formed scene: every track annotated in every frame."""
    if target_frame is None:
        target_frame = n_frames - 1
    track_ids = [f"obj-{k:02d}" for k in range(n_tracks)]
    track_labels = {tid: int(rng.integers(1, class_count)) for tid in track_ids}
    track_sizes = {tid: rng.uniform(1.0, 4.0, size=3) for tid in track_ids}

    frames, poses, boxes = [], [], []
    for fi in range(n_frames):
        frame_boxes = []
        dyn_points = []
        for tid in track_ids:
            box = OrientedBox(
                center=np.array(
                    [
                        rng.uniform(-extent, extent),
                        rng.uniform(-extent, extent),
                        rng.uniform(z_range[0] + 2.5, z_range[1]),
                    ]
                ),
                size=track_sizes[tid],
                yaw=rng.uniform(-math.pi, math.pi),
                track_id=tid,
                label=track_labels[tid],
            )
            frame_boxes.append(box)
            dyn_points.append(place_in_box(rng, box, points_per_track))
        static = np.column_stack(
            [
                rng.uniform(-extent, extent, size=n_static),
                rng.uniform(-extent, extent, size=n_static),
                rng.uniform(z_range[0], z_range[1], size=n_static),
            ]
        )
        xyz = np.vstack([static] + dyn_points) if dyn_points else static
        labels = rng.integers(1, class_count, size=len(xyz)).astype(np.uint16)
        if unlabeled_fraction > 0:
            mask = rng.random(len(xyz)) < unlabeled_fraction
            labels[mask] = UNLABELED
        frames.append(
            PointFrame(
                frame_index=fi,
                xyz=xyz.astype(np.float32),
                intensity=rng.random(len(xyz)).astype(np.float32),
                labels=labels,
            )
        )
        poses.append(random_transform(rng, max_translation=5.0))
        boxes.append(tuple(frame_boxes))
    return SceneSequence(
        scene_id=scene_id,
        frames=tuple(frames),
        poses=tuple(poses),
        boxes=tuple(boxes),
        target_frame=target_frame,
        class_count=class_count,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(42)
