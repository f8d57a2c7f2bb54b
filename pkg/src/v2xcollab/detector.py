"""A parametric stand-in for a learned single-agent 3D detector."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import rng
from .errors import ContractViolation
from .geometry import Box, PointCloud, Pose, bev_iou, invert, points_in_box
from .scene import DETECTION_RANGE, SURFACE_EPS, VEHICLE_SIZE, World, crop_to_range

SUPPORT_RADIUS = 2.0
MODAR_SCORE_FACTOR = 0.9


@dataclass(frozen=True)
class NoiseProfile:
    name: str = "profile-P"
    pos_sigma: float = 0.3
    yaw_sigma: float = 0.05
    size_sigma: float = 0.1
    fn_base: float = 0.3
    fn_halflife: float = 20.0
    fp_rate: float = 1.0
    score_tp: tuple = (6.0, 2.0)
    score_fp: tuple = (2.0, 5.0)
    min_points: int = 5
    modar_fn_discount: float = 0.3
    modar_pos_gain: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "score_tp", tuple(float(v) for v in self.score_tp))
        object.__setattr__(self, "score_fp", tuple(float(v) for v in self.score_fp))
        if min(self.pos_sigma, self.yaw_sigma, self.size_sigma) < 0:
            raise ContractViolation(f"{self.name}: noise sigmas must be >= 0")
        for f in ("fn_base", "modar_fn_discount", "modar_pos_gain"):
            if not 0.0 <= getattr(self, f) <= 1.0:
                raise ContractViolation(f"{self.name}: {f} must lie in [0, 1]")
        if self.fp_rate < 0 or self.fn_halflife <= 0:
            raise ContractViolation(f"{self.name}: fp_rate >= 0 and fn_halflife > 0 required")
        if self.min_points < 1:
            raise ContractViolation(f"{self.name}: min_points must be >= 1")
        if min(self.score_tp + self.score_fp) <= 0:
            raise ContractViolation(f"{self.name}: beta parameters must be positive")
        if self.mean_score_tp <= self.mean_score_fp:
            raise ContractViolation(f"{self.name}: true positives must out-score false positives on average")

    @property
    def mean_score_tp(self) -> float:
        a, b = self.score_tp
        return a / (a + b)

    @property
    def mean_score_fp(self) -> float:
        a, b = self.score_fp
        return a / (a + b)


def zero_noise_profile(**overrides) -> NoiseProfile:
    base = dict(name="zero", pos_sigma=0.0, yaw_sigma=0.0, size_sigma=0.0, fn_base=0.0, fp_rate=0.0)
    base.update(overrides)
    return NoiseProfile(**base)


STOCK_PROFILES = {
    "profile-P": NoiseProfile(name="profile-P"),
    "profile-S": NoiseProfile(
        name="profile-S", pos_sigma=0.4, yaw_sigma=0.07, size_sigma=0.15, fn_base=0.4, fp_rate=1.5, score_tp=(5.0, 2.5)
    ),
}


def _frame_pose(cloud: PointCloud, world: World, t: float) -> Pose:
    if cloud.frame == "global":
        return Pose.identity()
    if cloud.frame.startswith("agent"):
        return world.agent(int(cloud.frame[5:])).pose_at(t)
    raise ContractViolation(f"cannot locate frame {cloud.frame!r}")


def _frame_agent(cloud: PointCloud) -> int:
    return int(cloud.frame[5:]) if cloud.frame.startswith("agent") else -1


def simulate_detections(
    cloud: PointCloud,
    world: World,
    t: float,
    profile: NoiseProfile,
    seed: int,
    modar_support: Optional[Sequence] = None,
    pose: Optional[Pose] = None,
    half_range: float = DETECTION_RANGE,
    stream: Optional[tuple] = None,
) -> list:
    """Detections in the cloud's frame at ``t``.

    Random draws come from streams keyed by ``(seed, agent, t)`` and are made
    for every world object in id order, so two calls that differ only in
    their point evidence or MoDAR support share the same underlying noise.
    """
    pose = pose if pose is not None else _frame_pose(cloud, world, t)
    stream = stream if stream is not None else (_frame_agent(cloud), rng.time_key(t))
    to_local = invert(pose)
    gts = world.boxes_at(t)
    n = len(gts)
    r = rng.stream(seed, "detector", *stream)
    u_miss = r.random(n)
    d_pos = r.normal(size=(n, 3))
    d_yaw = r.normal(size=n)
    d_size = r.normal(size=(n, 3))
    s_tp = r.beta(*profile.score_tp, size=n)
    u_modar = r.random(n)

    support = []
    if modar_support:
        support = sorted(modar_support, key=lambda m: (m.source_agent, m.source_time, tuple(m.position)))
    sup_pos = np.array([m.position for m in support]).reshape(-1, 3)

    out = []
    for k, (oid, gbox) in enumerate(gts):
        box = gbox.transformed(to_local)
        if abs(box.center[0]) > half_range + 10 or abs(box.center[1]) > half_range + 10:
            continue
        n_pts = cloud.index.count(box, SURFACE_EPS)
        nearest = None
        if len(sup_pos):
            dist = np.linalg.norm(sup_pos - np.array(box.center), axis=1)
            ok = points_in_box(sup_pos, box, SURFACE_EPS) & (dist <= SUPPORT_RADIUS)
            if ok.any():
                cand = np.nonzero(ok)[0]
                nearest = support[int(cand[np.argmin(dist[cand])])]
        if n_pts >= profile.min_points:
            miss = profile.fn_base * 2.0 ** (-n_pts / profile.fn_halflife)
            pos_std = profile.pos_sigma
            if nearest is not None:
                miss *= profile.modar_fn_discount
                pos_std *= profile.modar_pos_gain
            if u_miss[k] < miss:
                continue
            center = np.array(box.center) + pos_std * d_pos[k]
            size = np.maximum(np.array(box.size) + profile.size_sigma * d_size[k], 0.1)
            out.append(Box(center, size, box.yaw + profile.yaw_sigma * d_yaw[k], s_tp[k], box.class_id))
        elif nearest is not None:
            if u_modar[k] < (1.0 - profile.fn_base) * (1.0 - profile.modar_fn_discount):
                out.append(
                    Box(nearest.position, nearest.feat_size, nearest.feat_yaw,
                        MODAR_SCORE_FACTOR * nearest.feat_score, nearest.feat_class)
                )
    out.extend(_false_positives(profile, seed, stream, half_range, pose))
    return crop_to_range(out, half_range)


def _false_positives(profile: NoiseProfile, seed: int, stream: tuple, half_range: float, pose: Pose) -> list:
    r = rng.stream(seed, "fp", *stream)
    n = int(r.poisson(profile.fp_rate)) if profile.fp_rate > 0 else 0
    if not n:
        return []
    xy = r.uniform(-half_range, half_range, size=(n, 2))
    yaw = r.uniform(-math.pi, math.pi, size=n)
    jit = r.uniform(0.9, 1.1, size=(n, 3))
    score = r.beta(*profile.score_fp, size=n)
    # false alarms sit on the ground plane, which is at -mount height in the sensor frame
    z = -float(pose.translation[2]) + VEHICLE_SIZE[2] / 2
    return [
        Box((xy[i, 0], xy[i, 1], z), tuple(np.array(VEHICLE_SIZE) * jit[i]), yaw[i], score[i], 0)
        for i in range(n)
    ]


def nms(boxes: Sequence[Box], iou_threshold: float = 0.2) -> list:
    """Greedy rotated-BEV non-max suppression."""
    if not 0.0 < iou_threshold < 1.0:
        raise ContractViolation("iou_threshold must lie in (0, 1)")
    order = sorted(boxes, key=lambda b: (-b.score, b.class_id, b.center[0]))
    if not order:
        return []
    xy = np.array([b.center[:2] for b in order])
    rad = np.array([math.hypot(b.size[0], b.size[1]) / 2 for b in order])
    kept: list = []
    for i, b in enumerate(order):
        # only kept boxes whose circumscribed circles meet this one can overlap it
        if kept:
            k = np.array(kept)
            near = k[np.hypot(*(xy[k] - xy[i]).T) <= rad[k] + rad[i]]
            if any(bev_iou(b, order[j]) > iou_threshold for j in near):
                continue
        kept.append(i)
    return [order[i] for i in kept]
