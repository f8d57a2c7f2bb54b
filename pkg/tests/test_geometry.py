import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from shapely.affinity import rotate, translate
from shapely.geometry import box as sbox

from v2xcollab.errors import ContractViolation
from v2xcollab.geometry import (
    Box,
    PointCloud,
    PointIndex,
    Pose,
    bev_iou,
    compose,
    emc_concatenate,
    invert,
    point_in_box,
    points_in_box,
    rectify_point,
    transform_point,
)

coord = st.floats(-50, 50, allow_nan=False)
angle = st.floats(-math.pi, math.pi, allow_nan=False)
extent = st.floats(0.2, 6.0)


@st.composite
def poses(draw):
    return Pose.from_yaw(draw(angle), (draw(coord), draw(coord), draw(coord)))


@st.composite
def boxes(draw):
    return Box((draw(coord), draw(coord), 0.0), (draw(extent), draw(extent), draw(extent)), draw(angle))


def translation(x, y, z):
    return Pose(np.eye(3), (x, y, z))


class TestPose:
    def test_compose_identity(self):
        p = Pose.from_yaw(0.7, (1, 2, 3))
        assert compose(Pose.identity(), p).allclose(p, 0)

    def test_compose_inverse(self):
        p = Pose.from_yaw(0.7, (1, 2, 3))
        assert compose(p, invert(p)).allclose(Pose.identity())

    def test_commuting_translations(self):
        got = compose(translation(1, 0, 0), translation(0, 2, 0))
        np.testing.assert_array_equal(got.translation, [1, 2, 0])

    def test_invert_examples(self):
        assert invert(Pose.identity()).allclose(Pose.identity(), 0)
        np.testing.assert_array_equal(invert(translation(1, -2, 3)).translation, [-1, 2, -3])
        assert math.isclose(invert(Pose.from_yaw(math.pi / 2)).yaw, -math.pi / 2, abs_tol=1e-12)

    def test_transform_examples(self):
        np.testing.assert_array_equal(transform_point(Pose.identity(), (1, 2, 3)), [1, 2, 3])
        np.testing.assert_allclose(transform_point(Pose.from_yaw(math.pi / 2), (1, 0, 0)), [0, 1, 0], atol=1e-12)
        np.testing.assert_array_equal(transform_point(translation(0, 0, 5), (1, 1, 0)), [1, 1, 5])

    @given(poses(), poses(), poses())
    def test_compose_associative(self, a, b, c):
        assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), 1e-9)

    @given(poses())
    def test_inverse_both_sides(self, p):
        assert compose(invert(p), p).allclose(Pose.identity(), 1e-9)
        assert invert(invert(p)).allclose(p, 1e-9)

    @given(poses(), poses(), st.tuples(coord, coord, coord))
    def test_compose_matches_sequential_transform(self, a, b, x):
        np.testing.assert_allclose(
            transform_point(compose(a, b), x), transform_point(a, transform_point(b, x)), atol=1e-9
        )

    @given(poses())
    def test_valid_rotation(self, p):
        assert p.is_valid()


class TestRectify:
    def test_static_object(self):
        p = Pose.from_yaw(0.3, (4, 5, 0))
        np.testing.assert_allclose(rectify_point((1, 2, 3), p, p), [1, 2, 3], atol=1e-12)

    def test_translation(self):
        then = Pose.from_yaw(0.0, (0, 0, 0))
        now = Pose.from_yaw(0.0, (2 * 0.3, 0, 0))
        np.testing.assert_allclose(rectify_point((1, 1, 0), then, now), [1.6, 1, 0], atol=1e-12)

    def test_quarter_turn_about_center(self):
        c = np.array([3.0, -2.0, 0.0])
        got = rectify_point(c + (1, 0, 0), Pose.from_yaw(0.0, c), Pose.from_yaw(math.pi / 2, c))
        np.testing.assert_allclose(got - c, [0, 1, 0], atol=1e-12)

    @given(poses(), poses(), st.tuples(coord, coord, coord))
    def test_object_coordinates_preserved(self, then, now, x):
        y = rectify_point(x, then, now)
        np.testing.assert_allclose(transform_point(invert(now), y), transform_point(invert(then), x), atol=1e-8)


class TestEmc:
    def test_single_identity(self):
        pc = PointCloud(np.arange(9.0).reshape(3, 3), 0.5, 0.0, "agent1", 1.0)
        out = emc_concatenate([pc], [Pose.identity()])
        np.testing.assert_array_equal(out.positions, pc.positions)
        np.testing.assert_array_equal(out.time_lag, 0.0)
        assert out.frame == "global"

    def test_length_mismatch(self):
        pc = PointCloud.empty("agent1", 0.0)
        with pytest.raises(ContractViolation):
            emc_concatenate([pc, pc], [Pose.identity()])

    def test_static_point_from_moving_ego(self):
        target = np.array([20.0, 3.0, 1.0])
        ego = [Pose.from_yaw(0.1 * k, (2.0 * k, 0.5 * k, 0)) for k in range(3)]
        seq = [PointCloud(transform_point(invert(p), target)[None, :], 0.5, 0.0, "ego", 0.2 * k) for k, p in enumerate(ego)]
        out = emc_concatenate(seq, ego)
        np.testing.assert_allclose(out.positions, np.tile(target, (3, 1)), atol=1e-9)
        np.testing.assert_allclose(out.time_lag, [0.4, 0.2, 0.0], atol=1e-12)

    def test_shadow_spread(self):
        # a point on an object moving at 2 m/s, seen 0.5 s apart by a static ego
        seq = [PointCloud([[10.0 + 2.0 * t, 0, 0]], 0.5, 0.0, "ego", t) for t in (0.0, 0.25, 0.5)]
        out = emc_concatenate(seq, [Pose.identity()] * 3)
        assert math.isclose(np.ptp(out.positions[:, 0]), 1.0, abs_tol=1e-12)


class TestBoxMembership:
    def test_center(self):
        b = Box((1, 2, 3), (1, 2, 1), 0.4)
        assert point_in_box(b.center, b)

    def test_just_outside(self):
        assert not point_in_box((1.0001, 0, 0), Box((0, 0, 0), (2, 2, 2)))

    def test_rotated_thin_box(self):
        c = math.cos(math.pi / 4)
        # size is (w, l, h) with l along the heading, so the long side lies on the 45 degree diagonal
        b = Box((0, 0, 0), (0.2, 2, 1), math.pi / 4)
        assert point_in_box((0.9 * c, 0.9 * c, 0), b)

    def test_boundary_inclusive(self):
        assert point_in_box((1.0, 1.0, 1.0), Box((0, 0, 0), (2, 2, 2)))

    @given(boxes(), st.lists(st.tuples(coord, coord, st.floats(-3, 3)), min_size=0, max_size=60), st.floats(0, 0.5))
    def test_index_matches_brute_force(self, b, pts, eps):
        xs = np.array(pts, dtype=float).reshape(-1, 3)
        want = np.nonzero(points_in_box(xs, b, eps))[0]
        np.testing.assert_array_equal(PointIndex(xs).inside(b, eps), want)

    def test_index_dense_cloud(self):
        r = np.random.default_rng(0)
        xs = r.uniform(-10, 10, size=(20_000, 3))
        index = PointIndex(xs)
        for _ in range(50):
            b = Box((*r.uniform(-10, 10, 2), 0.0), tuple(r.uniform(0.5, 5, 3)), r.uniform(-math.pi, math.pi))
            assert index.count(b, 1e-6) == int(points_in_box(xs, b, 1e-6).sum())


def shapely_iou(a: Box, b: Box) -> float:
    def poly(x):
        w, l, _ = x.size
        p = sbox(-l / 2, -w / 2, l / 2, w / 2)
        return translate(rotate(p, x.yaw, origin=(0, 0), use_radians=True), x.center[0], x.center[1])

    pa, pb = poly(a), poly(b)
    return pa.intersection(pb).area / pa.union(pb).area


class TestIou:
    def test_identical(self):
        b = Box((1, 1, 0), (2, 4, 1), 0.3)
        assert math.isclose(bev_iou(b, b), 1.0, abs_tol=1e-12)

    def test_disjoint(self):
        assert bev_iou(Box((0, 0, 0), (2, 2, 2)), Box((10, 0, 0), (2, 2, 2))) == 0.0

    def test_offset_squares(self):
        assert math.isclose(bev_iou(Box((0, 0, 0), (2, 2, 1)), Box((1, 0, 0), (2, 2, 1))), 1 / 3, abs_tol=1e-12)

    @given(boxes(), boxes())
    def test_matches_shapely(self, a, b):
        assert math.isclose(bev_iou(a, b), shapely_iou(a, b), abs_tol=1e-9)

    @given(boxes(), boxes())
    def test_symmetric_and_bounded(self, a, b):
        v = bev_iou(a, b)
        assert 0.0 <= v <= 1.0
        assert math.isclose(v, bev_iou(b, a), abs_tol=1e-12)

    @given(boxes(), st.floats(-1e-3, 1e-3), st.floats(-1e-3, 1e-3))
    def test_millimetre_shift_keeps_overlap(self, a, dx, dy):
        b = a.with_center((a.center[0] + dx, a.center[1] + dy, 0.0))
        assert bev_iou(a, b) > 0.98

    def test_rejects_degenerate_size(self):
        with pytest.raises(ContractViolation):
            Box((0, 0, 0), (0, 1, 1))
