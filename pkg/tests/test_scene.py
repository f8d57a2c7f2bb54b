import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import approx_angle, small_params
from v2xcollab.errors import ContractViolation, GenerationError, OutOfRangeError
from v2xcollab.geometry import Box, PointCloud, Pose
from v2xcollab.scene import (
    AGENT_ORDER,
    EGO_ID,
    IRSU_ID,
    ScenarioParams,
    Trajectory,
    generate_scenario,
    pose_at,
    visible_ground_truth,
)


def test_empty_world():
    w = generate_scenario(small_params(object_count=0), 1)
    assert w.trajectories == ()


def test_deterministic():
    a = generate_scenario(small_params(), 3)
    b = generate_scenario(small_params(), 3)
    assert a == b


def test_seeds_differ():
    assert generate_scenario(small_params(), 3) != generate_scenario(small_params(), 4)


def test_dynamic_count():
    w = generate_scenario(ScenarioParams(dynamic_fraction=0.5, object_count=40), 0)
    assert sum(tr.is_dynamic for tr in w.trajectories) == 20


def test_roster():
    w = generate_scenario(small_params(), 0)
    assert [a.agent_id for a in w.agents] == list(AGENT_ORDER)
    assert w.ego.agent_id == EGO_ID
    assert w.agent(IRSU_ID).mount_height > w.ego.mount_height


def test_infeasible_placement():
    with pytest.raises(GenerationError):
        generate_scenario(ScenarioParams(object_count=400, map_extent=20.0, max_retries=20), 0)


def test_invalid_params():
    with pytest.raises(ContractViolation):
        generate_scenario(ScenarioParams(agent_count=7), 0)


def test_no_initial_overlap():
    from v2xcollab.geometry import bev_iou

    w = generate_scenario(ScenarioParams(object_count=60, duration=4.0), 11)
    boxes = [tr.box_at(0.0) for tr in w.trajectories]
    assert all(bev_iou(a, b) == 0.0 for i, a in enumerate(boxes) for b in boxes[i + 1 :])


class TestPoseAt:
    def test_static(self):
        tr = Trajectory(0, 0, (1, 2, 1), Pose.from_yaw(0.4, (1, 2, 0)), t1=10)
        assert pose_at(tr, 7.3) == tr.initial

    def test_constant_velocity(self):
        tr = Trajectory(0, 0, (1, 2, 1), Pose.from_yaw(0.0, (1, 2, 0)), "cv", (2.0, 0.0), 2.0, t1=10)
        np.testing.assert_allclose(pose_at(tr, 0.5).translation, [2, 2, 0], atol=1e-12)

    def test_constant_turn(self):
        tr = Trajectory(0, 0, (1, 2, 1), Pose.from_yaw(0.0, (0, 0, 0)), "turn", speed=5.0, yaw_rate=0.5, t1=10)
        p = pose_at(tr, math.pi)
        assert approx_angle(p.yaw, 0.5 * math.pi)
        # turning left from the origin heading +x: the circle is centered at (0, 10)
        assert math.isclose(math.hypot(p.translation[0], p.translation[1] - 10.0), 10.0, abs_tol=1e-9)

    def test_out_of_range(self):
        tr = Trajectory(0, 0, (1, 2, 1), Pose.identity(), t0=1.0, t1=2.0)
        with pytest.raises(OutOfRangeError):
            pose_at(tr, 2.5)

    @given(st.floats(0.05, 1.5), st.floats(0.5, 15), st.floats(0, 9))
    def test_turn_speed_is_constant(self, w, v, t):
        tr = Trajectory(0, 0, (1, 2, 1), Pose.from_yaw(0.3, (1, 2, 0)), "turn", speed=v, yaw_rate=w, t1=10)
        dt = 1e-5
        a, b = pose_at(tr, t).translation, pose_at(tr, t + dt).translation
        assert math.isclose(np.linalg.norm(b - a) / dt, v, rel_tol=1e-4)

    def test_bad_trajectories(self):
        with pytest.raises(ContractViolation):
            Trajectory(0, 0, (1, 1, 1), Pose.identity(), "turn", speed=1.0, yaw_rate=0.0)
        with pytest.raises(ContractViolation):
            Trajectory(0, 0, (1, 1, 1), Pose.identity(), "cv", speed=-1.0)


class TestVisibleGroundTruth:
    @pytest.fixture()
    def world(self):
        return generate_scenario(small_params(object_count=2, dynamic_fraction=0.0), 5)

    def cloud_on(self, box: Box) -> PointCloud:
        return PointCloud([box.center], 0.5, 0.0, "global", 0.0)

    def test_modes(self, world):
        (ia, a), (ib, b) = world.boxes_at(0.0)
        clouds = {EGO_ID: self.cloud_on(a), IRSU_ID: self.cloud_on(b)}
        ego = visible_ground_truth(world, 0.0, clouds, "ego_only", half_range=1e3, with_ids=True)
        anyone = visible_ground_truth(world, 0.0, clouds, "any_agent", half_range=1e3, with_ids=True)
        assert [i for i, _ in ego] == [ia]
        assert [i for i, _ in anyone] == [ia, ib]

    def test_no_points(self, world):
        empty = {EGO_ID: PointCloud.empty("global", 0.0)}
        assert visible_ground_truth(world, 0.0, empty, "any_agent", half_range=1e3) == []

    def test_bad_mode(self, world):
        with pytest.raises(ContractViolation):
            visible_ground_truth(world, 0.0, {}, "everyone")

    def test_ego_frame(self, world):
        (_, a), _ = world.boxes_at(0.0)
        out = visible_ground_truth(world, 0.0, {EGO_ID: self.cloud_on(a)}, "ego_only", half_range=1e3)
        ego = world.ego.pose_at(0.0)
        np.testing.assert_allclose(ego.rotation @ np.array(out[0].center) + ego.translation, a.center, atol=1e-9)
