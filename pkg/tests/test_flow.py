import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from v2xcollab.errors import ContractViolation
from v2xcollab.flow import FlowNoiseProfile, flow_metrics, foreground_ids, oracle_flow, perturb_flow
from v2xcollab.geometry import PointCloud, Pose, emc_concatenate, rectify_points
from v2xcollab.lidar import scan_sequence, scan_times
from v2xcollab.scene import Trajectory, World, pose_at

flows3 = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=st.floats(-5, 5))


def moving_world():
    mover = Trajectory(0, 0, (2, 4, 2), Pose.from_yaw(0.0, (10, 0, 1)), "cv", (2.0, 0.0), 2.0, t1=5.0)
    parked = Trajectory(1, 0, (2, 4, 2), Pose.from_yaw(0.0, (-10, 0, 1)), t1=5.0)
    return World((mover, parked), (), duration=5.0)


class TestOracle:
    def test_examples(self):
        w = moving_world()
        # one point on each object's top face, sensed 0.3 s before t = 1
        mover_then = pose_at(w.trajectory(0), 0.7).translation + (0, 0, 1)
        pts = np.array([mover_then, [-10, 0, 2], [0, 30, 0]])
        pc = PointCloud(pts, 0.5, [0.3, 0.3, 0.0], "global", 1.0)
        f = oracle_flow(pc, w, 1.0)
        np.testing.assert_allclose(f[0], [0.6, 0, 0], atol=1e-12)
        np.testing.assert_array_equal(f[1:], 0.0)

    def test_matches_rectification(self, small_world):
        t = 1.6
        seq = scan_sequence(small_world, small_world.ego, t, 3)
        cloud = emc_concatenate(seq, [small_world.ego.pose_at(tt) for tt in scan_times(t, 3, small_world.frame_rate)])
        owner = foreground_ids(cloud, small_world)
        f = oracle_flow(cloud, small_world, t, owner)
        src = cloud.source_times
        assert (owner >= 0).all()
        for oid in np.unique(owner):
            tr = small_world.trajectory(int(oid))
            for ts in np.unique(src[owner == oid]):
                sel = (owner == oid) & (src == ts)
                want = rectify_points(cloud.positions[sel], pose_at(tr, float(ts)), pose_at(tr, t))
                np.testing.assert_allclose(cloud.positions[sel] + f[sel], want, atol=1e-9)

    def test_lowest_id_wins_overlap(self):
        a = Trajectory(5, 0, (2, 2, 2), Pose.from_yaw(0.0, (0, 0, 1)), t1=1.0)
        b = Trajectory(3, 0, (2, 2, 2), Pose.from_yaw(0.0, (0.5, 0, 1)), t1=1.0)
        pc = PointCloud([[0.2, 0, 1]], 0.5, 0.0, "global", 0.0)
        assert foreground_ids(pc, World((a, b), ())).tolist() == [3]


class TestPerturb:
    def test_exact_profile_is_identity(self):
        f = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(perturb_flow(f, FlowNoiseProfile(), 0), f)

    def test_gaussian_epe_against_sampling(self):
        n = 100_000
        gt = np.zeros((n, 3))
        out = perturb_flow(gt, FlowNoiseProfile(sigma=0.05), 2, foreground=np.ones(n, dtype=bool))
        epe = flow_metrics(out, gt)["EPE"]
        mc = np.linalg.norm(np.random.default_rng(99).normal(0, 0.05, (400_000, 3)), axis=1).mean()
        assert abs(epe - mc) / mc < 0.05
        # the sampled value sits near the Maxwell mean 2 sqrt(2/pi) sigma
        assert math.isclose(mc, 2 * math.sqrt(2 / math.pi) * 0.05, rel_tol=0.01)

    def test_full_miss(self):
        f = np.ones((50, 3))
        out = perturb_flow(f, FlowNoiseProfile(sigma=0.1, miss_rate=1.0), 0)
        np.testing.assert_array_equal(out, 0.0)

    def test_background_stays_zero_without_false_rate(self):
        f = np.zeros((100, 3))
        out = perturb_flow(f, FlowNoiseProfile(sigma=0.1), 0)
        np.testing.assert_array_equal(out, 0.0)

    def test_deterministic_per_stream(self):
        f = np.ones((30, 3))
        p = FlowNoiseProfile(0.1, 0.1, 0.1)
        a = perturb_flow(f, p, 4, stream=(1, 2))
        np.testing.assert_array_equal(a, perturb_flow(f, p, 4, stream=(1, 2)))
        assert not np.array_equal(a, perturb_flow(f, p, 4, stream=(1, 3)))

    def test_rates_validated(self):
        with pytest.raises(ContractViolation):
            FlowNoiseProfile(miss_rate=1.5)
        with pytest.raises(ContractViolation):
            FlowNoiseProfile(sigma=-1)


class TestMetrics:
    def test_exact(self):
        assert flow_metrics([[1, 2, 3]], [[1, 2, 3]]) == {"EPE": 0.0, "AccS": 100.0, "AccR": 100.0, "ROutliers": 0.0}

    def test_outlier(self):
        m = flow_metrics([[1.5, 0, 0]], [[1, 0, 0]])
        assert m == {"EPE": 0.5, "AccS": 0.0, "AccR": 0.0, "ROutliers": 100.0}

    def test_small_error(self):
        m = flow_metrics([[1.04, 0, 0]], [[1, 0, 0]])
        assert math.isclose(m["EPE"], 0.04, abs_tol=1e-12)
        assert (m["AccS"], m["AccR"], m["ROutliers"]) == (100.0, 100.0, 0.0)

    def test_static_point_false_flow(self):
        m = flow_metrics([[0.2, 0, 0]], [[0, 0, 0]])
        assert (m["AccS"], m["AccR"]) == (0.0, 0.0)

    def test_length_mismatch(self):
        with pytest.raises(ContractViolation):
            flow_metrics(np.zeros((2, 3)), np.zeros((3, 3)))

    @given(flows3)
    def test_self_comparison(self, x):
        assert flow_metrics(x, x) == {"EPE": 0.0, "AccS": 100.0, "AccR": 100.0, "ROutliers": 0.0}

    @given(flows3, flows3)
    def test_strict_within_relaxed(self, a, b):
        n = min(len(a), len(b))
        m = flow_metrics(a[:n], b[:n])
        assert m["AccS"] <= m["AccR"]
        assert 0 <= m["ROutliers"] <= 100
        assert m["EPE"] >= 0
