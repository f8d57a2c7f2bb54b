"""Ground-truth scene flow, a parametric estimation-error model, and flow metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from .errors import ContractViolation
from .geometry import PointCloud, PointIndex, rectify_points
from .scene import SURFACE_EPS, World, pose_at


@dataclass(frozen=True)
class FlowNoiseProfile:
    sigma: float = 0.0
    miss_rate: float = 0.0
    false_rate: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ContractViolation("sigma must be >= 0")
        for name in ("miss_rate", "false_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractViolation(f"{name} must lie in [0, 1]")

    @property
    def is_exact(self) -> bool:
        return self.sigma == 0.0 and self.miss_rate == 0.0 and self.false_rate == 0.0


def foreground_ids(cloud: PointCloud, world: World) -> np.ndarray:
    """Object id owning each global-frame point at its source time, -1 for background.

    Where boxes overlap, the lowest object id wins.
    """
    owner = np.full(len(cloud), -1, dtype=int)
    if not len(cloud):
        return owner
    src = cloud.source_times
    times, inverse = np.unique(np.round(src, 9), return_inverse=True)
    for ti, ts in enumerate(times):
        sel = np.nonzero(inverse == ti)[0]
        index = PointIndex(cloud.positions[sel])
        # ascending ids, so the first claim on a point is the lowest id
        for tr in sorted(world.trajectories, key=lambda tr: tr.object_id):
            if not (tr.t0 <= ts <= tr.t1):
                continue
            hit = sel[index.inside(tr.box_at(float(ts)), SURFACE_EPS)]
            hit = hit[owner[hit] < 0]
            owner[hit] = tr.object_id
    return owner


def oracle_flow(cloud: PointCloud, world: World, t_target: float, owner: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-point displacement that rigidly carries each point to its object's pose at ``t_target``.

    ``cloud`` is in the global frame. Background points get the zero vector.
    Returns an (N, 3) array.
    """
    if cloud.frame != "global":
        raise ContractViolation(f"oracle flow needs a global-frame cloud, got {cloud.frame!r}")
    flows = np.zeros((len(cloud), 3))
    if owner is None:
        owner = foreground_ids(cloud, world)
    src = np.round(cloud.source_times, 9)
    by_id = {tr.object_id: tr for tr in world.trajectories}
    fg = np.nonzero(owner >= 0)[0]
    if not len(fg):
        return flows
    # one rigid map per (object, source time) group
    times, t_idx = np.unique(src[fg], return_inverse=True)
    keys = owner[fg] * len(times) + t_idx.ravel()
    groups, inverse = np.unique(keys, return_inverse=True)
    order = np.argsort(inverse.ravel(), kind="stable")
    bounds = np.searchsorted(inverse.ravel()[order], np.arange(len(groups) + 1))
    for g, key in enumerate(groups):
        oid, ti = divmod(int(key), len(times))
        sel = fg[order[bounds[g] : bounds[g + 1]]]
        tr = by_id[oid]
        x = cloud.positions[sel]
        flows[sel] = rectify_points(x, pose_at(tr, float(times[ti])), pose_at(tr, t_target)) - x
    return flows


def perturb_flow(
    flows: np.ndarray,
    profile: FlowNoiseProfile,
    seed: int,
    foreground: Optional[np.ndarray] = None,
    stream: tuple = (),
) -> np.ndarray:
    """Corrupt flows with Gaussian error, missed foreground and spurious background.

    ``foreground`` defaults to points with a non-zero flow. Foreground points
    receive N(0, sigma^2) per axis and are zeroed with probability
    ``miss_rate``; background points receive N(0, sigma^2) with probability
    ``false_rate`` and stay zero otherwise.
    """
    flows = np.asarray(flows, dtype=float).reshape(-1, 3)
    if profile.is_exact:
        return flows.copy()
    n = len(flows)
    if foreground is None:
        foreground = np.any(flows != 0.0, axis=1)
    r = rng.stream(seed, "flow", *stream)
    noise = r.normal(0.0, 1.0, size=(n, 3)) * profile.sigma
    u_miss = r.random(n)
    u_false = r.random(n)
    out = flows + noise
    out[foreground & (u_miss < profile.miss_rate)] = 0.0
    bg = ~foreground
    spurious = bg & (u_false < profile.false_rate)
    out[bg & ~spurious] = 0.0
    out[spurious] = noise[spurious]
    return out


STRICT = 0.05
RELAXED = 0.10
OUTLIER = 0.30


def flow_metrics(pred: np.ndarray, gt: np.ndarray) -> dict:
    """EPE in meters; AccS, AccR and ROutliers as percentages."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if len(pred) != len(gt):
        raise ContractViolation(f"{len(pred)} predictions for {len(gt)} ground-truth flows")
    if not len(gt):
        raise ContractViolation("flow metrics need at least one point")
    err = np.linalg.norm(pred - gt, axis=1)
    gnorm = np.linalg.norm(gt, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(gnorm > 0, err / gnorm, np.where(err > 0, np.inf, 0.0))
    return {
        "EPE": float(err.mean()),
        "AccS": float(np.mean((err < STRICT) | (rel < STRICT)) * 100.0),
        "AccR": float(np.mean((err < RELAXED) | (rel < RELAXED)) * 100.0),
        "ROutliers": float(np.mean((err > OUTLIER) & (rel > OUTLIER)) * 100.0),
    }
