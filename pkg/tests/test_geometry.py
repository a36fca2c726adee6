import math

import numpy as np
import pytest

from ldo.geometry import (
    OrientedBox,
    RigidTransform,
    apply,
    compose,
    invert,
    normalize_yaw,
    points_in_box,
    transform_box,
)

from conftest import random_transform, random_yaw_transform


def half_space_inside(points, box, margin=0.0):
    """Independent membership oracle: project onto the box's axes."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    axes = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    half = box.size / 2.0 + margin
    rel = np.asarray(points, dtype=np.float64) - box.center
    mask = np.ones(len(rel), dtype=bool)
    for axis, extent in zip(axes, half):
        mask &= np.abs(rel @ axis) <= extent
    return mask


class TestRigidTransform:
    def test_quaternion_normalized_after_construction(self, rng):
        for _ in range(50):
            q = rng.normal(size=4) * rng.uniform(0.1, 10.0)
            t = RigidTransform(q, rng.normal(size=3))
            assert abs(np.linalg.norm(t.rotation) - 1.0) < 1e-9

    def test_already_unit_quaternion_kept_bit_exact(self):
        q = np.array([0.5, 0.5, 0.5, 0.5])
        t = RigidTransform(q, np.zeros(3))
        assert np.array_equal(t.rotation, q)

    def test_zero_quaternion_rejected(self):
        with pytest.raises(ValueError):
            RigidTransform(np.zeros(4), np.zeros(3))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            RigidTransform(np.array([1.0, 0, 0, np.nan]), np.zeros(3))
        with pytest.raises(ValueError):
            RigidTransform(np.array([1.0, 0, 0, 0]), np.array([np.inf, 0, 0]))


class TestCompose:
    def test_identity_left_and_right(self, rng):
        t = random_transform(rng)
        ident = RigidTransform.identity()
        for result in (compose(ident, t), compose(t, ident)):
            np.testing.assert_allclose(result.rotation, t.rotation, atol=1e-15)
            np.testing.assert_allclose(result.translation, t.translation, atol=1e-12)

    def test_inverse_gives_identity(self, rng):
        for _ in range(20):
            t = random_transform(rng)
            round_trip = compose(t, invert(t))
            np.testing.assert_allclose(
                round_trip.rotation, [1.0, 0.0, 0.0, 0.0], atol=1e-9
            )
            np.testing.assert_allclose(round_trip.translation, 0.0, atol=1e-9)

    def test_compose_matches_sequential_application(self, rng):
        a = random_transform(rng)
        b = random_transform(rng)
        pts = rng.uniform(-50, 50, size=(100, 3))
        sequential = apply(a, apply(b, pts))
        composed = apply(compose(a, b), pts)
        assert np.abs(composed - sequential).max() < 1e-9

    def test_associative_on_three_transform_chains(self, rng):
        for _ in range(10):
            a, b, c = (random_transform(rng) for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.abs(np.abs(left.rotation @ right.rotation) - 1.0) < 1e-9
            np.testing.assert_allclose(left.translation, right.translation, atol=1e-9)


class TestApply:
    def test_identity_is_bitwise_noop(self, rng):
        pts = rng.uniform(-100, 100, size=(64, 3))
        assert np.array_equal(apply(RigidTransform.identity(), pts), pts)

    def test_pure_translation(self):
        t = RigidTransform(np.array([1.0, 0, 0, 0]), np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(apply(t, np.zeros((1, 3)))[0], [1.0, 2.0, 3.0])

    def test_quarter_turn_yaw(self):
        t = RigidTransform.from_yaw(math.pi / 2)
        out = apply(t, np.array([[1.0, 0.0, 0.0]]))[0]
        np.testing.assert_allclose(out, [0.0, 1.0, 0.0], atol=1e-12)

    def test_preserves_pairwise_distances(self, rng):
        pts = rng.uniform(-30, 30, size=(40, 3))
        before = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        for _ in range(10):
            moved = apply(random_transform(rng), pts)
            after = np.linalg.norm(moved[:, None] - moved[None, :], axis=-1)
            np.testing.assert_allclose(after, before, rtol=1e-9, atol=1e-9)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            apply(RigidTransform.identity(), np.zeros((3, 4)))


class TestOrientedBox:
    def test_size_must_be_positive(self):
        with pytest.raises(ValueError):
            OrientedBox(np.zeros(3), np.array([1.0, 0.0, 1.0]), 0.0, "t", 1)

    @pytest.mark.parametrize(
        "yaw,expected",
        [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi, math.pi),
         (2 * math.pi, 0.0), (-1.5, -1.5)],
    )
    def test_yaw_normalized_to_half_open_range(self, yaw, expected):
        box = OrientedBox(np.zeros(3), np.ones(3), yaw, "t", 1)
        assert box.yaw == pytest.approx(expected, abs=1e-12)
        assert -math.pi < box.yaw <= math.pi

    def test_in_range_yaw_kept_bit_exact(self):
        yaw = 0.1234567890123456
        assert OrientedBox(np.zeros(3), np.ones(3), yaw, "t", 1).yaw == yaw

    def test_normalize_yaw_rejects_non_finite(self):
        with pytest.raises(ValueError):
            normalize_yaw(float("nan"))


class TestPointsInBox:
    def test_center_is_inside(self):
        box = OrientedBox(np.array([1.0, 2.0, 3.0]), np.array([2.0, 1.0, 4.0]), 0.7, "t", 1)
        assert points_in_box(box.center[None, :], box)[0]

    def test_boundary_is_closed(self):
        box = OrientedBox(np.zeros(3), np.array([2.0, 4.0, 6.0]), 0.0, "t", 1)
        on_face = np.array([[1.0, 0.0, 0.0]])
        assert points_in_box(on_face, box, margin=0.0)[0]
        just_past = np.array([[1.0 + 1e-9, 0.0, 0.0]])
        assert not points_in_box(just_past, box, margin=0.0)[0]

    def test_margin_dilates(self):
        box = OrientedBox(np.zeros(3), np.array([2.0, 2.0, 2.0]), 0.0, "t", 1)
        p = np.array([[1.4, 0.0, 0.0]])
        assert not points_in_box(p, box)[0]
        assert points_in_box(p, box, margin=0.5)[0]

    def test_negative_margin_rejected(self):
        box = OrientedBox(np.zeros(3), np.ones(3), 0.0, "t", 1)
        with pytest.raises(ValueError):
            points_in_box(np.zeros((1, 3)), box, margin=-0.1)

    def test_matches_half_space_oracle(self, rng):
        box = OrientedBox(
            np.array([2.0, -1.0, 0.5]), np.array([4.0, 2.0, 1.5]), 0.7, "t", 1
        )
        pts = rng.uniform(-5, 5, size=(1000, 3))
        np.testing.assert_array_equal(
            points_in_box(pts, box), half_space_inside(pts, box)
        )

    def test_invariant_under_common_rigid_motion(self, rng):
        box = OrientedBox(
            np.array([1.0, 2.0, -0.5]), np.array([3.0, 1.5, 2.0]), -2.2, "t", 1
        )
        pts = rng.uniform(-6, 6, size=(500, 3)) + box.center
        base = points_in_box(pts, box)
        for _ in range(5):
            motion = random_yaw_transform(rng)
            moved = points_in_box(apply(motion, pts), transform_box(motion, box))
            np.testing.assert_array_equal(moved, base)
