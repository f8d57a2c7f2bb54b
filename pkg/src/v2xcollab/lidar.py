"""Ray-cast LiDAR against upright object boxes.

Each (beam, azimuth) ray keeps its nearest box hit, so occlusion falls out of
the nearest-hit rule. Only object surfaces return points: there is no ground
or clutter.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import OutOfRangeError
from .geometry import PointCloud, compose, invert
from .scene import CLASS_INTENSITY, AgentConfig, LidarSpec, World


@lru_cache(maxsize=16)
def ray_directions(spec: LidarSpec) -> np.ndarray:
    """Unit ray directions in the sensor frame, beam-major, shape (beams*bins, 3)."""
    elev = _angles(spec)
    az = 2.0 * math.pi * np.arange(spec.azimuth_bins) / spec.azimuth_bins
    e, a = np.meshgrid(elev, az, indexing="ij")
    d = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1).reshape(-1, 3)
    d.flags.writeable = False
    return d


def cast_rays(origin_local: np.ndarray, dirs: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Slab test against an axis-aligned box centred at the origin.

    ``origin_local`` and ``dirs`` are in the box frame. Returns the entry
    distance per ray, ``inf`` where the ray misses or starts inside the box.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (-half - origin_local) * inv
        t2 = (half - origin_local) * inv
    tlo = np.fmin(t1, t2)
    thi = np.fmax(t1, t2)
    # a ray parallel to a slab and inside it yields nan from 0*inf; it constrains nothing
    tlo = np.where(np.isnan(tlo), -np.inf, tlo)
    thi = np.where(np.isnan(thi), np.inf, thi)
    tnear = tlo.max(axis=1)
    tfar = thi.min(axis=1)
    hit = (tnear <= tfar) & (tnear > 0.0)
    return np.where(hit, tnear, np.inf)


@lru_cache(maxsize=16)
def _angles(spec: LidarSpec):
    lo, hi = spec.vertical_fov
    elev = np.linspace(lo, hi, spec.beams) if spec.beams > 1 else np.array([(lo + hi) / 2])
    return elev


def _candidate_rays(spec: LidarSpec, center: np.ndarray, radius: float) -> np.ndarray:
    """Flat indices of rays that may hit a sphere of ``radius`` around ``center``."""
    dist = float(np.linalg.norm(center))
    bins = spec.azimuth_bins
    if dist <= radius * 1.01:
        return np.arange(spec.beams * bins)
    half_angle = math.asin(min(radius / dist, 1.0))
    step = 2.0 * math.pi / bins
    az = math.atan2(center[1], center[0])
    a0 = int(math.floor((az - half_angle) / step)) - 1
    a1 = int(math.ceil((az + half_angle) / step)) + 1
    az_idx = np.arange(a0, a1 + 1) % bins
    if len(az_idx) > bins:
        az_idx = np.arange(bins)
    el = math.atan2(center[2], math.hypot(center[0], center[1]))
    elev = _angles(spec)
    pad = (elev[1] - elev[0]) if len(elev) > 1 else 0.0
    beams = np.nonzero((elev >= el - half_angle - pad) & (elev <= el + half_angle + pad))[0]
    return (beams[:, None] * bins + np.unique(az_idx)[None, :]).ravel()


def lidar_scan(world: World, agent: AgentConfig, t: float) -> PointCloud:
    """One sweep in the agent frame at time ``t``."""
    if not (0.0 <= t <= world.duration):
        raise OutOfRangeError(f"scan time {t} outside world [0, {world.duration}]")
    spec = agent.lidar
    frame = f"agent{agent.agent_id}"
    to_sensor = invert(agent.pose_at(t))
    dirs = ray_directions(spec)
    best = np.full(len(dirs), np.inf)
    best_cls = np.zeros(len(dirs), dtype=int)
    for _, box in world.boxes_at(t):
        bp = compose(to_sensor, box.pose)
        c = bp.translation
        half = np.array([box.size[1], box.size[0], box.size[2]]) / 2.0
        radius = float(np.linalg.norm(half))
        if np.linalg.norm(c) - radius > spec.max_range:
            continue
        idx = _candidate_rays(spec, c, radius)
        if not len(idx):
            continue
        r = bp.rotation
        o_local = -(r.T @ c)
        tn = cast_rays(o_local[None, :], dirs[idx] @ r, half[None, :])
        closer = tn < best[idx]
        sel = idx[closer]
        best[sel] = tn[closer]
        best_cls[sel] = box.class_id
    hit = best <= spec.max_range
    if not hit.any():
        return PointCloud.empty(frame, t)
    pts = dirs[hit] * best[hit][:, None]
    inten = np.array([CLASS_INTENSITY.get(int(c), 0.5) for c in best_cls[hit]])
    return PointCloud(pts, inten, np.zeros(len(pts)), frame, t)


def scan_times(t: float, k: int, rate: float) -> list:
    return [t - (k - 1 - j) / rate for j in range(k)]


def scan_sequence(world: World, agent: AgentConfig, t: float, k: int) -> list:
    """``k`` sweeps ending at ``t``, oldest first, each in its own agent frame."""
    times = scan_times(t, k, world.frame_rate)
    if times[0] < -1e-9:
        raise OutOfRangeError(f"sequence start {times[0]} precedes the world start")
    return [lidar_scan(world, agent, max(tt, 0.0)) for tt in times]
