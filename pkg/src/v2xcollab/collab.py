"""Collaboration strategies, with the MoDAR late-early pipeline at the center.

A MoDAR point is a detected box squeezed into a single point: the box center
becomes the coordinate, and size, heading, score and class ride along as
features. Receivers propagate these points to their own query time with the
pooled scene flow the sender attached, move them into the ego frame, and
append them to the ego point cloud behind null-padded feature blocks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from . import rng
from .detector import STOCK_PROFILES, NoiseProfile, nms, simulate_detections
from .errors import ContractViolation
from .flow import FlowNoiseProfile, foreground_ids, oracle_flow, perturb_flow
from .geometry import (
    Box,
    PointCloud,
    Pose,
    compose,
    concatenate_clouds,
    emc_concatenate,
    invert,
    normalize_angle,
    points_in_box,
    rotate_vectors,
    transform_point,
)
from .lidar import lidar_scan, scan_times
from .scene import DETECTION_RANGE, EGO_ID, SURFACE_EPS, World, crop_to_range, visible_ground_truth
from .v2x import (
    DetectionMessage,
    EarlyMessage,
    MessageBus,
    decode_detection,
    decode_early,
    encode_detection,
    encode_early,
)


class StrategyId(str, enum.Enum):
    NONE = "NONE"
    LATE_SYNC = "LATE_SYNC"
    LATE_ASYNC = "LATE_ASYNC"
    LATE_ASYNC_PROP = "LATE_ASYNC_PROP"
    EARLY = "EARLY"
    LATE_EARLY = "LATE_EARLY"

    @classmethod
    def parse(cls, name) -> StrategyId:
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            raise ContractViolation(f"unknown strategy {name!r}") from None


class Estimator(str, enum.Enum):
    EQ5 = "eq5"
    LAG_WEIGHTED = "lag_weighted"

    @classmethod
    def parse(cls, name) -> Estimator:
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ContractViolation(f"unknown estimator {name!r}") from None


@dataclass(frozen=True)
class ModarPoint:
    position: tuple
    feat_size: tuple
    feat_yaw: float
    feat_score: float
    feat_class: int
    pooled_flow: tuple = (0.0, 0.0, 0.0)
    source_agent: int = -1
    source_time: float = 0.0
    span: float = 1.0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        size = tuple(float(v) for v in self.feat_size)
        if not all(math.isfinite(v) for v in pos):
            raise ContractViolation("MoDAR position must be finite")
        if min(size) <= 0:
            raise ContractViolation("MoDAR size features must be positive")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "feat_size", size)
        object.__setattr__(self, "pooled_flow", tuple(float(v) for v in self.pooled_flow))


def box_to_modar(b: Box, flow=(0.0, 0.0, 0.0), agent: int = -1, t_i: float = 0.0, span: float = 1.0) -> ModarPoint:
    return ModarPoint(b.center, b.size, b.yaw, b.score, b.class_id, tuple(flow), agent, t_i, span)


def modar_to_box(m: ModarPoint) -> Box:
    return Box(m.position, m.feat_size, m.feat_yaw, m.feat_score, m.feat_class)


# lidar returns sit on box surfaces, so a slightly offset detection would
# otherwise lose its visible faces
POOL_MARGIN = 0.3


class PooledFlow(NamedTuple):
    flow: np.ndarray
    empty: bool


def _inside(b: Box, cloud, margin: float = 0.0) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.index.mask(b, SURFACE_EPS + margin)
    return points_in_box(np.asarray(cloud, dtype=float).reshape(-1, 3), b, SURFACE_EPS + margin)


def pool_box_flow(b: Box, cloud, flows, margin: float = 0.0) -> PooledFlow:
    """Mean flow of the points lying inside ``b`` grown by ``margin``; zero and flagged when none do."""
    inside = _inside(b, cloud, margin)
    if not inside.any():
        return PooledFlow(np.zeros(3), True)
    return PooledFlow(np.asarray(flows, dtype=float).reshape(-1, 3)[inside].mean(axis=0), False)


def pool_box_velocity(b: Box, cloud: PointCloud, flows, margin: float = 0.0) -> PooledFlow:
    """Least-squares velocity through the origin, fitting flow = velocity * time lag.

    Points with zero lag carry no motion information and drop out. Returns a
    zero velocity, flagged empty, when no inside point has a positive lag.
    """
    inside = _inside(b, cloud, margin)
    lag = cloud.time_lag[inside]
    f = np.asarray(flows, dtype=float).reshape(-1, 3)[inside]
    denom = float(np.dot(lag, lag))
    if not inside.any() or denom == 0.0:
        return PooledFlow(np.zeros(3), True)
    return PooledFlow((lag[:, None] * f).sum(axis=0) / denom, False)


def propagate_modar(m: ModarPoint, t: float, estimator=Estimator.LAG_WEIGHTED) -> ModarPoint:
    """Advance a MoDAR point from its source time to ``t`` along its pooled flow."""
    estimator = Estimator.parse(estimator)
    lag = t - m.source_time
    if lag < 0:
        raise ContractViolation(f"cannot propagate backwards: t={t} < source_time={m.source_time}")
    if lag == 0:
        return m
    f = m.pooled_flow
    if estimator is Estimator.EQ5:
        k = lag / m.span
        pos = tuple(p + k * fi for p, fi in zip(m.position, f))
    else:
        # pooled_flow carries velocity * span, so this recovers velocity * lag
        pos = tuple(p + lag * (fi / m.span) for p, fi in zip(m.position, f))
    return replace(m, position=pos)


def modar_to_ego_frame(m: ModarPoint, pose_sender: Pose, pose_ego: Pose) -> ModarPoint:
    rel = compose(invert(pose_ego), pose_sender)
    pos = transform_point(rel, m.position)
    flow = rotate_vectors(rel, np.array(m.pooled_flow))[0]
    yaw = normalize_angle(m.feat_yaw + pose_sender.yaw - pose_ego.yaw)
    return replace(m, position=tuple(pos), pooled_flow=tuple(flow), feat_yaw=yaw)


LIDAR, MODAR = 0, 1


@dataclass(frozen=True)
class FusedPoint:
    position: tuple
    kind: int
    lidar_feat: Optional[tuple] = None  # (intensity, time_lag)
    modar_feat: Optional[tuple] = None  # (w, l, h, yaw, score, class)


@dataclass(frozen=True, eq=False)
class FusedCloud:
    """LiDAR and MoDAR points side by side, each with the other's features zero-padded."""

    positions: np.ndarray
    kind: np.ndarray
    lidar_feat: np.ndarray
    modar_feat: np.ndarray
    lidar: PointCloud
    modars: tuple

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> FusedPoint:
        pos = tuple(self.positions[i])
        if self.kind[i] == LIDAR:
            return FusedPoint(pos, LIDAR, lidar_feat=tuple(self.lidar_feat[i]))
        return FusedPoint(pos, MODAR, modar_feat=tuple(self.modar_feat[i]))

    def __iter__(self) -> Iterator[FusedPoint]:
        for i in range(len(self)):
            yield self[i]

    @property
    def features(self) -> np.ndarray:
        """(N, 3 + 2 + 6) matrix: xyz, LiDAR block, MoDAR block."""
        return np.hstack([self.positions, self.lidar_feat, self.modar_feat])


def fuse_modar(cloud: PointCloud, modars: Sequence[ModarPoint]) -> FusedCloud:
    modars = tuple(sorted(modars, key=lambda m: (m.source_agent, m.source_time, m.position)))
    n, k = len(cloud), len(modars)
    pos = np.zeros((n + k, 3))
    pos[:n] = cloud.positions
    lid = np.zeros((n + k, 2))
    lid[:n, 0] = cloud.intensity
    lid[:n, 1] = cloud.time_lag
    mod = np.zeros((n + k, 6))
    for j, m in enumerate(modars):
        pos[n + j] = m.position
        mod[n + j] = (*m.feat_size, m.feat_yaw, m.feat_score, m.feat_class)
    kind = np.concatenate([np.full(n, LIDAR), np.full(k, MODAR)]).astype(int)
    return FusedCloud(pos, kind, lid, mod, cloud, modars)


@dataclass
class CollabConfig:
    profiles: dict = field(default_factory=lambda: dict(STOCK_PROFILES))
    flow_noise: FlowNoiseProfile = field(default_factory=lambda: FlowNoiseProfile(0.05, 0.02, 0.01))
    lag: float = 0.2
    lag_overrides: dict = field(default_factory=dict)
    latency: float = 0.0
    estimator: str = "lag_weighted"
    sequence_length: int = 3
    nms_iou: float = 0.2
    half_range: float = DETECTION_RANGE
    wire_roundtrip: bool = False
    participants: Optional[tuple] = None
    profile_overrides: dict = field(default_factory=dict)
    gt_agents: str = "world"  # world | participants
    pool_margin: float = POOL_MARGIN

    def lag_for(self, agent_id: int) -> float:
        return float(self.lag_overrides.get(agent_id, self.lag))


@dataclass
class StrategyResult:
    detections: list
    bytes_exchanged: int
    per_agent_bytes: dict


def production_time(t_request: float, rate: float) -> float:
    """Latest detection tick of an agent running at ``rate`` Hz not after ``t_request``."""
    return math.floor(t_request * rate + 1e-6) / rate


class Episode:
    """Lazily computed, cached per-agent products of one world and seed.

    Strategies, network sizes and detector mixes evaluated on the same world
    share scans, flows and detections through this cache.
    """

    def __init__(self, world: World, config: CollabConfig, seed: int):
        self.world = world
        self.config = config
        self.seed = seed
        self.estimator = Estimator.parse(config.estimator)
        k = config.sequence_length
        if k < 1:
            raise ContractViolation("sequence_length must be >= 1")
        self.span = (k - 1) / world.frame_rate if k > 1 else 1.0 / world.frame_rate
        self._scans: dict = {}
        self._local: dict = {}
        self._flows: dict = {}
        self._dets: dict = {}
        self._msgs: dict = {}
        self._early: dict = {}
        self._gt: dict = {}

    def derive(self, config: CollabConfig) -> Episode:
        """Episode on the same world and seed with a new config, reusing every cache it can."""
        ep = Episode(self.world, config, self.seed)
        old = self.config
        same_seq = config.sequence_length == old.sequence_length
        ep._scans = self._scans
        if same_seq:
            ep._local = self._local
            ep._early = self._early
            if config.flow_noise == old.flow_noise:
                ep._flows = self._flows
        if config.profiles == old.profiles and config.half_range == old.half_range:
            ep._dets = self._dets
            if (
                same_seq
                and ep._flows is self._flows
                and ep.estimator is self.estimator
                and config.pool_margin == old.pool_margin
            ):
                ep._msgs = self._msgs
        if config.gt_agents == old.gt_agents == "world" and config.half_range == old.half_range:
            ep._gt = self._gt
        return ep

    # participants and profiles

    @property
    def participants(self) -> tuple:
        ids = [a.agent_id for a in self.world.agents]
        if self.config.participants is None:
            return tuple(ids)
        return tuple(a for a in ids if a in self.config.participants)

    def profile_of(self, agent_id: int) -> NoiseProfile:
        name = self.config.profile_overrides.get(agent_id, self.world.agent(agent_id).profile)
        try:
            return self.config.profiles[name]
        except KeyError:
            raise ContractViolation(f"agent {agent_id} uses undefined profile {name!r}") from None

    def earliest_query(self) -> float:
        lags = [self.config.lag_for(a) for a in self.participants if a != EGO_ID] or [0.0]
        return max(lags) + (self.config.sequence_length - 1) / self.world.frame_rate

    # sensing

    def scan(self, agent_id: int, t: float) -> PointCloud:
        key = (agent_id, rng.time_key(t))
        if key not in self._scans:
            self._scans[key] = lidar_scan(self.world, self.world.agent(agent_id), t)
        return self._scans[key]

    def local_cloud(self, agent_id: int, t: float) -> PointCloud:
        """EMC-concatenated sequence ending at ``t``, in the agent frame at ``t``."""
        key = (agent_id, rng.time_key(t))
        if key not in self._local:
            agent = self.world.agent(agent_id)
            times = scan_times(t, self.config.sequence_length, self.world.frame_rate)
            seq = [self.scan(agent_id, tt) for tt in times]
            glob = emc_concatenate(seq, [agent.pose_at(tt) for tt in times])
            self._local[key] = (glob, glob.transformed(invert(agent.pose_at(t)), f"agent{agent_id}"))
        return self._local[key][1]

    def global_cloud(self, agent_id: int, t: float) -> PointCloud:
        self.local_cloud(agent_id, t)
        return self._local[(agent_id, rng.time_key(t))][0]

    def flows(self, agent_id: int, t: float) -> np.ndarray:
        """Estimated flow per point of ``local_cloud``, in the agent frame."""
        key = (agent_id, rng.time_key(t))
        if key not in self._flows:
            glob = self.global_cloud(agent_id, t)
            owner = foreground_ids(glob, self.world)
            gt = oracle_flow(glob, self.world, t, owner)
            est = perturb_flow(gt, self.config.flow_noise, self.seed, owner >= 0, (agent_id, rng.time_key(t)))
            pose = self.world.agent(agent_id).pose_at(t)
            self._flows[key] = rotate_vectors(invert(pose), est)
        return self._flows[key]

    def detections(self, agent_id: int, t: float, cloud: Optional[PointCloud] = None, support=None) -> list:
        profile = self.profile_of(agent_id)
        cacheable = cloud is None and not support
        key = (agent_id, rng.time_key(t), profile.name)
        if cacheable and key in self._dets:
            return self._dets[key]
        c = cloud if cloud is not None else self.local_cloud(agent_id, t)
        dets = simulate_detections(
            c, self.world, t, profile, self.seed, support,
            pose=self.world.agent(agent_id).pose_at(t),
            half_range=self.config.half_range,
            stream=(agent_id, rng.time_key(t)),
        )
        if cacheable:
            self._dets[key] = dets
        return dets

    # messages

    def detection_message(self, agent_id: int, t_i: float) -> DetectionMessage:
        key = (agent_id, rng.time_key(t_i), self.profile_of(agent_id).name)
        if key not in self._msgs:
            local = self.local_cloud(agent_id, t_i)
            flows = self.flows(agent_id, t_i)
            # pool over flow-rectified points, so shadowed returns land back in their box
            rectified = replace(local, positions=local.positions + flows)
            entries = []
            for b in self.detections(agent_id, t_i):
                if self.estimator is Estimator.EQ5:
                    f = pool_box_flow(b, rectified, flows, self.config.pool_margin).flow
                else:
                    f = pool_box_velocity(b, rectified, flows, self.config.pool_margin).flow * self.span
                entries.append((b, tuple(f)))
            pose = self.world.agent(agent_id).pose_at(t_i)
            self._msgs[key] = DetectionMessage(agent_id, t_i, pose, self.span, tuple(entries))
        return self._msgs[key]

    def early_message(self, agent_id: int, t_i: float) -> EarlyMessage:
        key = (agent_id, rng.time_key(t_i))
        if key not in self._early:
            pose = self.world.agent(agent_id).pose_at(t_i)
            self._early[key] = EarlyMessage(agent_id, t_i, pose, self.local_cloud(agent_id, t_i))
        return self._early[key]

    # ground truth

    def ground_truth(self, t: float, mode: str, with_ids: bool = False) -> list:
        key = (rng.time_key(t), mode)
        if key not in self._gt:
            ids = self.participants if self.config.gt_agents == "participants" else [a.agent_id for a in self.world.agents]
            clouds = {}
            for a in ids:
                if mode == "ego_only" and a != EGO_ID:
                    continue
                pose = self.world.agent(a).pose_at(t)
                clouds[a] = self.scan(a, t).transformed(pose, "global")
            self._gt[key] = visible_ground_truth(
                self.world, t, clouds, mode, EGO_ID, self.config.half_range, with_ids=True
            )
        out = self._gt[key]
        return out if with_ids else [b for _, b in out]


def _sender_time(ep: Episode, agent_id: int, t: float, synchronous: bool) -> Optional[float]:
    if synchronous:
        return t
    rate = ep.world.agent(agent_id).detection_rate
    ti = production_time(t - ep.config.lag_for(agent_id), rate)
    first = (ep.config.sequence_length - 1) / ep.world.frame_rate
    return ti if ti >= first - 1e-9 else None


def _exchange(ep: Episode, t: float, synchronous: bool, early: bool) -> tuple:
    """Publish every other participant's message on a fresh bus and query it at ``t``."""
    bus = MessageBus()
    for aid in ep.participants:
        if aid == EGO_ID:
            continue
        ti = _sender_time(ep, aid, t, synchronous)
        if ti is None:
            continue
        msg = ep.early_message(aid, ti) if early else ep.detection_message(aid, ti)
        bus.publish(msg, ep.config.latency)
    received = bus.query(t, querier=EGO_ID)
    per_agent = {}
    out = {}
    for aid, msg in received.items():
        data = encode_early(msg) if early else encode_detection(msg)
        per_agent[aid] = len(data)
        if ep.config.wire_roundtrip:
            msg = decode_early(data) if early else decode_detection(data)
        out[aid] = msg
    return out, per_agent


def _received_modars(ep: Episode, msgs: dict, t: float, ego_pose: Pose, propagate: bool) -> list:
    out = []
    for aid in sorted(msgs):
        msg = msgs[aid]
        for b, f in msg.entries:
            m = box_to_modar(b, f, aid, msg.t_i, msg.span)
            if propagate:
                m = propagate_modar(m, t, ep.estimator)
            out.append(modar_to_ego_frame(m, msg.pose, ego_pose))
    return out


def run_strategy(
    strategy,
    world: World,
    t: float,
    config: Optional[CollabConfig] = None,
    seed: int = 0,
    episode: Optional[Episode] = None,
) -> StrategyResult:
    """Ego-frame detections at query time ``t`` under one collaboration strategy."""
    strategy = StrategyId.parse(strategy)
    ep = episode if episode is not None else Episode(world, config or CollabConfig(), seed)
    cfg = ep.config
    ego_pose = world.agent(EGO_ID).pose_at(t)
    ego_dets = ep.detections(EGO_ID, t)

    if strategy is StrategyId.NONE:
        return StrategyResult(crop_to_range(ego_dets, cfg.half_range), 0, {})

    if strategy is StrategyId.EARLY:
        msgs, per_agent = _exchange(ep, t, synchronous=False, early=True)
        to_ego = invert(ego_pose)
        clouds = [ep.local_cloud(EGO_ID, t)]
        for aid in sorted(msgs):
            m = msgs[aid]
            clouds.append(m.points.transformed(compose(to_ego, m.pose), f"agent{EGO_ID}"))
        union = concatenate_clouds(clouds, f"agent{EGO_ID}", t)
        dets = ep.detections(EGO_ID, t, cloud=union)
        return StrategyResult(crop_to_range(dets, cfg.half_range), sum(per_agent.values()), per_agent)

    synchronous = strategy is StrategyId.LATE_SYNC
    msgs, per_agent = _exchange(ep, t, synchronous=synchronous, early=False)
    nbytes = sum(per_agent.values())

    if strategy is StrategyId.LATE_EARLY:
        modars = _received_modars(ep, msgs, t, ego_pose, propagate=True)
        fused = fuse_modar(ep.local_cloud(EGO_ID, t), modars)
        dets = ep.detections(EGO_ID, t, cloud=fused.lidar, support=list(fused.modars))
        return StrategyResult(crop_to_range(dets, cfg.half_range), nbytes, per_agent)

    propagate = strategy is StrategyId.LATE_ASYNC_PROP
    remote = [modar_to_box(m) for m in _received_modars(ep, msgs, t, ego_pose, propagate)]
    fused = nms(list(ego_dets) + remote, cfg.nms_iou)
    return StrategyResult(crop_to_range(fused, cfg.half_range), nbytes, per_agent)
