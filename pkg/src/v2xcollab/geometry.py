"""Rigid transforms, point clouds, boxes and BEV overlap.

Conventions: a ``Pose`` maps points from its child frame into its parent
frame, ``x_parent = R @ x_child + t``. Boxes are upright; ``yaw`` rotates the
box length axis away from the parent x axis, so ``w`` spans the box y axis and
``l`` the box x axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractViolation

ORTHO_TOL = 1e-9


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> Pose:
        return cls(yaw_matrix(yaw), translation)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> Pose:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def is_valid(self, tol: float = ORTHO_TOL) -> bool:
        r = self.rotation
        return bool(
            np.all(np.isfinite(r))
            and np.all(np.isfinite(self.translation))
            and np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0)
            and abs(np.linalg.det(r) - 1.0) <= tol
        )

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return np.allclose(self.rotation, other.rotation, atol=atol, rtol=0) and np.allclose(
            self.translation, other.translation, atol=atol, rtol=0
        )

    def __repr__(self):
        return f"Pose(yaw={self.yaw:.6f}, translation={self.translation.tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    """Pose that applies ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def transform_point(p: Pose, x) -> np.ndarray:
    return p.rotation @ np.asarray(x, dtype=float) + p.translation


def transform_points(p: Pose, xs: np.ndarray) -> np.ndarray:
    """Vectorized ``transform_point`` over an (N, 3) array."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 3)
    return xs @ p.rotation.T + p.translation


def rotate_vectors(p: Pose, vs: np.ndarray) -> np.ndarray:
    vs = np.asarray(vs, dtype=float).reshape(-1, 3)
    return vs @ p.rotation.T


class LidarPoint(NamedTuple):
    position: np.ndarray
    intensity: float
    time_lag: float


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Column-oriented point cloud.

    ``time_lag`` is measured back from ``timestamp``, so a point was sensed at
    ``timestamp - time_lag``.
    """

    positions: np.ndarray
    intensity: np.ndarray
    time_lag: np.ndarray
    frame: str
    timestamp: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(pos)
        inten = np.broadcast_to(np.asarray(self.intensity, dtype=float), (n,)).copy()
        lag = np.broadcast_to(np.asarray(self.time_lag, dtype=float), (n,)).copy()
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "intensity", inten)
        object.__setattr__(self, "time_lag", lag)

    @classmethod
    def empty(cls, frame: str, timestamp: float) -> PointCloud:
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0), frame, timestamp)

    @classmethod
    def from_points(cls, points: Sequence[LidarPoint], frame: str, timestamp: float) -> PointCloud:
        if not points:
            return cls.empty(frame, timestamp)
        return cls(
            np.array([p.position for p in points], dtype=float),
            np.array([p.intensity for p in points]),
            np.array([p.time_lag for p in points]),
            frame,
            timestamp,
        )

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> LidarPoint:
        return LidarPoint(self.positions[i].copy(), float(self.intensity[i]), float(self.time_lag[i]))

    def __iter__(self) -> Iterator[LidarPoint]:
        for i in range(len(self)):
            yield self[i]

    @property
    def source_times(self) -> np.ndarray:
        return self.timestamp - self.time_lag

    def transformed(self, pose: Pose, frame: str) -> PointCloud:
        """Re-express the cloud in another frame; ``pose`` maps current -> new."""
        return replace(self, positions=transform_points(pose, self.positions), frame=frame)

    def retimed(self, timestamp: float) -> PointCloud:
        """Shift the reference time; source times of all points are preserved."""
        return replace(self, time_lag=self.time_lag + (timestamp - self.timestamp), timestamp=timestamp)

    @cached_property
    def index(self) -> PointIndex:
        return PointIndex(self.positions)

    def select(self, mask: np.ndarray) -> PointCloud:
        return replace(
            self,
            positions=self.positions[mask],
            intensity=self.intensity[mask],
            time_lag=self.time_lag[mask],
        )


def concatenate_clouds(clouds: Sequence[PointCloud], frame: str, timestamp: float) -> PointCloud:
    """Stack clouds already expressed in ``frame``, re-referencing lags to ``timestamp``."""
    clouds = [c.retimed(timestamp) for c in clouds]
    if not clouds:
        return PointCloud.empty(frame, timestamp)
    return PointCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.intensity for c in clouds]),
        np.concatenate([c.time_lag for c in clouds]),
        frame,
        timestamp,
    )


def emc_concatenate(seq: Sequence[PointCloud], ego_poses: Sequence[Pose]) -> PointCloud:
    """Ego-motion-compensated concatenation of a scan sequence into the global frame.

    ``seq`` is ordered oldest to newest and ``ego_poses[i]`` is the sensor pose
    at the time of ``seq[i]``.
    """
    if len(seq) != len(ego_poses):
        raise ContractViolation(f"{len(seq)} clouds but {len(ego_poses)} poses")
    if not seq:
        raise ContractViolation("empty sequence")
    newest = seq[-1].timestamp
    glob = [c.transformed(p, "global") for c, p in zip(seq, ego_poses)]
    return concatenate_clouds(glob, "global", newest)


def rectify_point(x_global, obj_pose_then: Pose, obj_pose_now: Pose) -> np.ndarray:
    """Carry a point rigidly attached to an object from its old pose to its new one."""
    return transform_point(compose(obj_pose_now, invert(obj_pose_then)), x_global)


def rectify_points(xs: np.ndarray, obj_pose_then: Pose, obj_pose_now: Pose) -> np.ndarray:
    return transform_points(compose(obj_pose_now, invert(obj_pose_then)), xs)


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple
    yaw: float = 0.0
    score: float = 1.0
    class_id: int = 0

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        s = tuple(float(v) for v in self.size)
        if len(c) != 3 or len(s) != 3:
            raise ContractViolation("box center and size must be 3-vectors")
        if min(s) <= 0:
            raise ContractViolation(f"box size must be positive, got {s}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))
        object.__setattr__(self, "score", float(self.score))
        object.__setattr__(self, "class_id", int(self.class_id))

    @property
    def pose(self) -> Pose:
        return Pose.from_yaw(self.yaw, self.center)

    def transformed(self, p: Pose) -> Box:
        """Box re-expressed through ``p``; only the yaw part of ``p`` turns the heading."""
        c = transform_point(p, self.center)
        return replace(self, center=tuple(c), yaw=self.yaw + p.yaw)

    def with_center(self, center) -> Box:
        return replace(self, center=tuple(center))

    def corners_bev(self) -> np.ndarray:
        """Counter-clockwise BEV corners, shape (4, 2)."""
        w, l, _ = self.size
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.array([[l / 2, w / 2], [-l / 2, w / 2], [-l / 2, -w / 2], [l / 2, -w / 2]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center[:2])


def points_in_box(xs: np.ndarray, b: Box, eps: float = 0.0) -> np.ndarray:
    """Boundary-inclusive membership mask for an (N, 3) array."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 3)
    d = xs - np.array(b.center)
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    w, l, h = b.size
    return (
        (np.abs(lx) <= l / 2 + eps)
        & (np.abs(ly) <= w / 2 + eps)
        & (np.abs(d[:, 2]) <= h / 2 + eps)
    )


class PointIndex:
    """BEV k-d tree over an (N, 3) array for repeated box-membership queries.

    Agrees exactly with :func:`points_in_box`; the tree only prunes points
    outside the box's circumscribed circle.
    """

    def __init__(self, xs: np.ndarray):
        self.xs = np.asarray(xs, dtype=float).reshape(-1, 3)
        self._tree = cKDTree(self.xs[:, :2]) if len(self.xs) else None

    def __len__(self) -> int:
        return len(self.xs)

    def inside(self, b: Box, eps: float = 0.0) -> np.ndarray:
        """Sorted indices of the points inside ``b``."""
        if self._tree is None:
            return np.zeros(0, dtype=int)
        w, l, _ = b.size
        r = math.hypot(l / 2 + eps, w / 2 + eps) * (1 + 1e-9) + 1e-9
        idx = np.asarray(self._tree.query_ball_point(b.center[:2], r, return_sorted=True), dtype=int)
        if not len(idx):
            return idx
        return idx[points_in_box(self.xs[idx], b, eps)]

    def mask(self, b: Box, eps: float = 0.0) -> np.ndarray:
        out = np.zeros(len(self.xs), dtype=bool)
        out[self.inside(b, eps)] = True
        return out

    def count(self, b: Box, eps: float = 0.0) -> int:
        return len(self.inside(b, eps))


def point_in_box(x, b: Box, eps: float = 0.0) -> bool:
    return bool(points_in_box(np.asarray(x, dtype=float)[None, :], b, eps)[0])


def _polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    a = 0.0
    for i in range(len(poly)):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % len(poly)]
        a += x1 * y2 - x2 * y1
    return 0.5 * a


def _clip(subject, clip_poly):
    # Sutherland-Hodgman against a convex CCW clip polygon
    out = list(subject)
    n = len(clip_poly)
    for i in range(n):
        if not out:
            break
        ax, ay = clip_poly[i]
        bx, by = clip_poly[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, out = out, []
        for j in range(len(inp)):
            cur, prev = inp[j], inp[j - 1]
            sc, sp = side(cur), side(prev)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
    return out


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _canonical_order(poly):
    # drop near-duplicate vertices, then start from the lexicographically smallest
    cleaned = []
    for p in poly:
        if not cleaned or abs(p[0] - cleaned[-1][0]) > 1e-12 or abs(p[1] - cleaned[-1][1]) > 1e-12:
            cleaned.append(p)
    while len(cleaned) > 1 and abs(cleaned[0][0] - cleaned[-1][0]) <= 1e-12 and abs(cleaned[0][1] - cleaned[-1][1]) <= 1e-12:
        cleaned.pop()
    if not cleaned:
        return cleaned
    k = min(range(len(cleaned)), key=lambda i: cleaned[i])
    return cleaned[k:] + cleaned[:k]


def bev_intersection_area(a: Box, b: Box) -> float:
    ra = math.hypot(a.size[0], a.size[1]) / 2
    rb = math.hypot(b.size[0], b.size[1]) / 2
    if math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) > ra + rb:
        return 0.0
    pa = [tuple(p) for p in a.corners_bev().tolist()]
    pb = [tuple(p) for p in b.corners_bev().tolist()]
    inter = _canonical_order(_clip(pa, pb))
    return max(_polygon_area(inter), 0.0)


def bev_iou(a: Box, b: Box) -> float:
    inter = bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    area_a = a.size[0] * a.size[1]
    area_b = b.size[0] * b.size[1]
    union = area_a + area_b - inter
    return float(min(max(inter / union, 0.0), 1.0))
