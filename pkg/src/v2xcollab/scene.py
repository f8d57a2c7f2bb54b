"""Synthetic intersection worlds with analytic object trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import rng
from .errors import ContractViolation, GenerationError, OutOfRangeError
from .geometry import Box, Pose, PointCloud, PointIndex, bev_iou, invert

VEHICLE = 0
PEDESTRIAN = 1
CLASS_NAMES = {VEHICLE: "vehicle", PEDESTRIAN: "pedestrian"}
CLASS_INTENSITY = {VEHICLE: 0.6, PEDESTRIAN: 0.3}

IRSU, EGO, CAV = "IRSU", "EGO", "CAV"
EGO_ID = 1
IRSU_ID = 0
# join order for networks of growing size: ego, then the roadside unit, then CAVs
AGENT_ORDER = (1, 0, 2, 3, 4, 5)

DETECTION_RANGE = 51.2
# surface hits sit on box faces up to rounding; membership tests allow this much
SURFACE_EPS = 1e-6


@dataclass(frozen=True)
class Trajectory:
    object_id: int
    class_id: int
    size: tuple
    initial: Pose
    kind: str = "static"  # static | cv | turn
    velocity: tuple = (0.0, 0.0)
    speed: float = 0.0
    yaw_rate: float = 0.0
    t0: float = 0.0
    t1: float = math.inf

    def __post_init__(self):
        if self.kind not in ("static", "cv", "turn"):
            raise ContractViolation(f"unknown motion kind {self.kind!r}")
        if self.speed < 0:
            raise ContractViolation("speed must be non-negative")
        if abs(self.yaw_rate) > 1.5:
            raise ContractViolation("|yaw_rate| must be <= 1.5 rad/s")
        if self.kind == "turn" and self.yaw_rate == 0.0:
            raise ContractViolation("constant-turn trajectory needs a non-zero yaw rate")
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))

    @property
    def is_dynamic(self) -> bool:
        return self.kind != "static"

    def box_at(self, t: float, score: float = 1.0) -> Box:
        p = pose_at(self, t)
        return Box(p.translation, self.size, p.yaw, score, self.class_id)


def pose_at(traj: Trajectory, t: float) -> Pose:
    if not (traj.t0 <= t <= traj.t1):
        raise OutOfRangeError(f"t={t} outside [{traj.t0}, {traj.t1}] for object {traj.object_id}")
    dt = t - traj.t0
    p0 = traj.initial
    if traj.kind == "static" or dt == 0.0:
        return p0
    x0, y0, z0 = p0.translation
    if traj.kind == "cv":
        vx, vy = traj.velocity
        return Pose(p0.rotation, (x0 + vx * dt, y0 + vy * dt, z0))
    th0 = p0.yaw
    w = traj.yaw_rate
    th = th0 + w * dt
    r = traj.speed / w
    x = x0 + r * (math.sin(th) - math.sin(th0))
    y = y0 - r * (math.cos(th) - math.cos(th0))
    return Pose.from_yaw(th, (x, y, z0))


@dataclass(frozen=True)
class LidarSpec:
    beams: int = 32
    azimuth_bins: int = 1024
    max_range: float = 100.0
    vertical_fov: tuple = (math.radians(-30.0), math.radians(10.0))

    def __post_init__(self):
        if self.beams < 1 or self.azimuth_bins < 4 or self.max_range <= 0:
            raise ContractViolation(f"invalid lidar spec {self}")
        object.__setattr__(self, "vertical_fov", tuple(float(v) for v in self.vertical_fov))


@dataclass(frozen=True)
class AgentConfig:
    agent_id: int
    kind: str
    trajectory: Trajectory
    lidar: LidarSpec = LidarSpec()
    detection_rate: float = 5.0
    profile: str = "profile-P"

    def __post_init__(self):
        if self.kind not in (IRSU, CAV, EGO):
            raise ContractViolation(f"unknown agent kind {self.kind!r}")
        if self.detection_rate <= 0:
            raise ContractViolation("detection_rate must be positive")

    @property
    def mount_height(self) -> float:
        return float(self.trajectory.initial.translation[2])

    def pose_at(self, t: float) -> Pose:
        return pose_at(self.trajectory, t)


@dataclass(frozen=True)
class World:
    trajectories: tuple
    agents: tuple
    frame_rate: float = 5.0
    duration: float = 20.0
    extent: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(self, "agents", tuple(self.agents))
        kinds = [a.kind for a in self.agents]
        if self.agents and kinds.count(EGO) != 1:
            raise ContractViolation("world needs exactly one EGO agent")
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ContractViolation("duplicate agent ids")
        oids = [tr.object_id for tr in self.trajectories]
        if len(set(oids)) != len(oids):
            raise ContractViolation("duplicate object ids")
        irsu = [a.mount_height for a in self.agents if a.kind == IRSU]
        veh = [a.mount_height for a in self.agents if a.kind != IRSU]
        if irsu and veh and min(irsu) <= max(veh):
            raise ContractViolation("roadside unit must be mounted above vehicles")

    @property
    def ego(self) -> AgentConfig:
        return next(a for a in self.agents if a.kind == EGO)

    def agent(self, agent_id: int) -> AgentConfig:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(agent_id)

    def boxes_at(self, t: float) -> list:
        """(object_id, Box) pairs in the global frame for objects valid at ``t``."""
        return [
            (tr.object_id, tr.box_at(t))
            for tr in self.trajectories
            if tr.t0 <= t <= tr.t1
        ]

    def trajectory(self, object_id: int) -> Trajectory:
        for tr in self.trajectories:
            if tr.object_id == object_id:
                return tr
        raise KeyError(object_id)


@dataclass
class ScenarioParams:
    object_count: int = 60
    dynamic_fraction: float = 0.3
    turn_fraction: float = 0.2
    small_object_fraction: float = 0.0
    speed_range: tuple = (2.0, 8.0)
    yaw_rate_max: float = 0.3
    map_extent: float = 60.0
    road_half_width: float = 7.0
    agent_count: int = 6
    frame_rate: float = 5.0
    duration: float = 20.0
    vehicle_mount: float = 1.8
    irsu_mount: float = 6.0
    max_retries: int = 500
    lidar: LidarSpec = field(default_factory=LidarSpec)
    agent_profiles: dict = field(default_factory=dict)
    default_profile: str = "profile-P"
    detection_rate: float = 5.0

    def validate(self):
        if self.object_count < 0:
            raise ContractViolation("object_count must be >= 0")
        if not 0.0 <= self.dynamic_fraction <= 1.0:
            raise ContractViolation("dynamic_fraction must lie in [0, 1]")
        if not 1 <= self.agent_count <= 6:
            raise ContractViolation("agent_count must lie in 1..6")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi:
            raise ContractViolation("speed_range must be 0 <= lo <= hi")
        if self.yaw_rate_max > 1.5:
            raise ContractViolation("yaw_rate_max must be <= 1.5")


# (heading, lateral offset axis) for the four lanes of a plus-shaped crossing
_LANES = (
    ("east", 0.0),
    ("west", math.pi),
    ("north", math.pi / 2),
    ("south", -math.pi / 2),
)
_LANE_OFFSET = 3.5
VEHICLE_SIZE = (1.9, 4.5, 1.6)
PEDESTRIAN_SIZE = (0.6, 0.6, 1.7)


def _lane_point(lane: int, s: float) -> tuple:
    """Point at arc length ``s`` along a lane; s=0 is the crossing center line."""
    heading = _LANES[lane][1]
    c, si = math.cos(heading), math.sin(heading)
    # lanes keep to the right of their direction of travel
    return (s * c + _LANE_OFFSET * si, s * si - _LANE_OFFSET * c)


def _overlaps(box: Box, others: Sequence[Box], margin: float) -> bool:
    grown = Box(box.center, tuple(v + 2 * margin for v in box.size), box.yaw)
    return any(bev_iou(grown, o) > 0.0 for o in others)


def _agent_roster(p: ScenarioParams, r: np.random.Generator, lane_speed: list) -> list:
    ext = p.map_extent
    agents = []
    for k, aid in enumerate(AGENT_ORDER[: p.agent_count]):
        profile = p.agent_profiles.get(aid, p.default_profile)
        if aid == IRSU_ID:
            off = p.road_half_width + 2.0
            tr = Trajectory(1000 + aid, VEHICLE, VEHICLE_SIZE, Pose.from_yaw(math.pi / 4, (-off, -off, p.irsu_mount)), t1=p.duration)
            agents.append(AgentConfig(aid, IRSU, tr, p.lidar, p.detection_rate, profile))
            continue
        lane = {1: 0, 2: 1, 3: 2, 4: 3, 5: 0}[aid]
        v = lane_speed[lane]
        s0 = -min(ext - 5.0, v * p.duration / 2)
        if aid == 5:
            s0 = max(s0 - 15.0, -(ext - 5.0))
        s0 += float(r.uniform(-2.0, 2.0))
        x, y = _lane_point(lane, s0)
        heading = _LANES[lane][1]
        vel = (v * math.cos(heading), v * math.sin(heading))
        kind = "cv" if v > 0 else "static"
        tr = Trajectory(1000 + aid, VEHICLE, VEHICLE_SIZE, Pose.from_yaw(heading, (x, y, p.vehicle_mount)),
                        kind=kind, velocity=vel, speed=v, t1=p.duration)
        agents.append(AgentConfig(aid, EGO if aid == EGO_ID else CAV, tr, p.lidar, p.detection_rate, profile))
    return agents


def generate_scenario(cfg: ScenarioParams, seed: int) -> World:
    cfg.validate()
    r = rng.stream(seed, "scenario")
    ext = cfg.map_extent
    lane_speed = [float(r.uniform(*cfg.speed_range)) for _ in _LANES]
    agents = _agent_roster(cfg, r, lane_speed)
    agent_boxes = [Box(a.pose_at(0.0).translation, VEHICLE_SIZE, a.pose_at(0.0).yaw) for a in agents if a.kind != IRSU]

    n = cfg.object_count
    n_dyn = int(round(n * cfg.dynamic_fraction))
    n_turn = int(round(n_dyn * cfg.turn_fraction))
    n_small = int(round(n * cfg.small_object_fraction))
    placed: list[Box] = []
    trajs: list[Trajectory] = []
    for oid in range(n):
        dynamic = oid < n_dyn
        turning = dynamic and oid < n_turn
        small = oid >= n - n_small
        cls = PEDESTRIAN if small else VEHICLE
        base = PEDESTRIAN_SIZE if small else VEHICLE_SIZE
        for _ in range(cfg.max_retries):
            jit = r.uniform(0.9, 1.1, size=3)
            size = tuple(float(b * j) for b, j in zip(base, jit))
            if dynamic:
                lane = int(r.integers(len(_LANES)))
                heading = _LANES[lane][1]
                v = 1.4 if small else lane_speed[lane]
                s0 = float(r.uniform(-ext - v * cfg.duration, ext))
                x, y = _lane_point(lane, s0)
                if small:
                    # pedestrians walk on the sidewalk beside the lane
                    shift = cfg.road_half_width + 2.0 - _LANE_OFFSET
                    x += shift * math.sin(heading)
                    y -= shift * math.cos(heading)
                vel = (v * math.cos(heading), v * math.sin(heading))
                if turning:
                    w = float(r.uniform(0.05, cfg.yaw_rate_max)) * (1 if r.random() < 0.5 else -1)
                    tr = Trajectory(oid, cls, size, Pose.from_yaw(heading, (x, y, size[2] / 2)),
                                    kind="turn", speed=v, yaw_rate=w, t1=cfg.duration)
                else:
                    tr = Trajectory(oid, cls, size, Pose.from_yaw(heading, (x, y, size[2] / 2)),
                                    kind="cv" if v > 0 else "static", velocity=vel, speed=v, t1=cfg.duration)
            else:
                if r.random() < 0.5:
                    # kerbside parking along one of the two roads
                    along = float(r.uniform(-ext, ext))
                    side = cfg.road_half_width + 1.5
                    side = side if r.random() < 0.5 else -side
                    if r.random() < 0.5:
                        x, y, heading = along, side, 0.0
                    else:
                        x, y, heading = side, along, math.pi / 2
                    if abs(along) < cfg.road_half_width + 3.0:
                        continue
                else:
                    lo = cfg.road_half_width + 4.0
                    x = float(r.uniform(lo, ext)) * (1 if r.random() < 0.5 else -1)
                    y = float(r.uniform(lo, ext)) * (1 if r.random() < 0.5 else -1)
                    heading = float(r.uniform(-math.pi, math.pi))
                tr = Trajectory(oid, cls, size, Pose.from_yaw(heading, (x, y, size[2] / 2)), t1=cfg.duration)
            box = tr.box_at(0.0)
            if _overlaps(box, placed, 0.25) or _overlaps(box, agent_boxes, 0.5):
                continue
            placed.append(box)
            trajs.append(tr)
            break
        else:
            raise GenerationError(f"could not place object {oid} after {cfg.max_retries} attempts")
    return World(tuple(trajs), tuple(agents), cfg.frame_rate, cfg.duration, ext)


def crop_to_range(boxes: Sequence[Box], half: float = DETECTION_RANGE) -> list:
    return [b for b in boxes if abs(b.center[0]) <= half and abs(b.center[1]) <= half]


def visible_ground_truth(
    world: World,
    t: float,
    clouds: Mapping[int, PointCloud],
    mode: str,
    ego_id: int = EGO_ID,
    half_range: float = DETECTION_RANGE,
    with_ids: bool = False,
):
    """Ground-truth boxes at ``t`` in the ego frame, filtered by point evidence.

    ``clouds`` maps agent id to a cloud in the global frame. ``ego_only`` keeps
    boxes holding at least one ego point; ``any_agent`` accepts points from any
    agent in ``clouds``.
    """
    if mode == "ego_only":
        sources = [clouds[ego_id]] if ego_id in clouds else []
    elif mode == "any_agent":
        sources = [clouds[k] for k in sorted(clouds)]
    else:
        raise ContractViolation(f"unknown gt mode {mode!r}")
    pts = np.concatenate([c.positions for c in sources]) if sources else np.zeros((0, 3))
    index = PointIndex(pts)
    to_ego = invert(world.agent(ego_id).pose_at(t))
    out = []
    for oid, box in world.boxes_at(t):
        if not index.count(box, SURFACE_EPS):
            continue
        local = box.transformed(to_ego)
        if abs(local.center[0]) <= half_range and abs(local.center[1]) <= half_range:
            out.append((oid, local))
    return out if with_ids else [b for _, b in out]
