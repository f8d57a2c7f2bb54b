"""The twelve acceptance criteria as runnable checks.

Each check returns a :class:`Criterion` with a pass flag and a one-line
detail. ``run_criteria`` prints one PASS/FAIL line per criterion. The
ensemble runs behind criteria 4, 5, 6 and 11 are shared through a
:class:`Context`.
"""

from __future__ import annotations

import dataclasses
import math
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import config as cfgmod
from .collab import (
    CollabConfig,
    Episode,
    Estimator,
    box_to_modar,
    modar_to_ego_frame,
    propagate_modar,
)
from .detector import zero_noise_profile
from .evaluation import average_precision
from .experiment import (
    frame_times,
    recovery_ratio,
    run_experiment,
    sweep_agents,
    sweep_heterogeneity,
    sweep_table,
)
from .flow import FlowNoiseProfile, flow_metrics, foreground_ids, perturb_flow
from .geometry import Box, Pose, emc_concatenate, invert, rectify_points, transform_point
from .lidar import scan_sequence, scan_times
from .scene import IRSU_ID, ScenarioParams, generate_scenario, pose_at
from .v2x import DetectionMessage, encode_detection, encode_early


@dataclass
class Criterion:
    number: int
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} [{self.number:2d}] {self.name}: {self.detail} ({self.seconds:.1f} s)"


@dataclass
class Context:
    workdir: Path
    cache: dict = field(default_factory=dict)

    def default_run(self) -> tuple:
        """The 30-seed default experiment: (records csv text, summary, seconds)."""
        if "default" not in self.cache:
            t0 = time.perf_counter()
            out = self.workdir / "default"
            summary = run_experiment(cfgmod.ExperimentConfig().validate(), out)
            self.cache["default"] = (out, summary, time.perf_counter() - t0)
        return self.cache["default"]


def _means(summary: dict, gt_mode: str) -> dict:
    return {r["strategy"]: r["map_mean"] for r in summary["rows"] if r["gt_mode"] == gt_mode}


def _fmt(means: dict, keys) -> str:
    return ", ".join(f"{k} {means[k]:.2f}" for k in keys)


# 1


def surface_distance(x: np.ndarray, b: Box) -> np.ndarray:
    """Unsigned distance from each point to the surface of ``b``."""
    d = np.asarray(x, dtype=float).reshape(-1, 3) - np.array(b.center)
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    q = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=1)
    w, l, h = b.size
    excess = np.abs(q) - np.array([l / 2, w / 2, h / 2])
    outside = np.linalg.norm(np.maximum(excess, 0.0), axis=1)
    inside = np.minimum(excess.max(axis=1), 0.0)
    return outside + np.abs(inside)


def c1_rectification(ctx: Context) -> Criterion:
    t0 = time.perf_counter()
    worst, n_pts, n_moving = 0.0, 0, 0
    params = ScenarioParams(
        object_count=8, dynamic_fraction=1.0, turn_fraction=0.0, agent_count=1, duration=1.0, map_extent=30.0
    )
    for seed in range(100):
        world = generate_scenario(params, seed)
        ego = world.ego
        t = world.duration
        seq = scan_sequence(world, ego, t, 3)
        cloud = emc_concatenate(seq, [ego.pose_at(tt) for tt in scan_times(t, 3, world.frame_rate)])
        owner = foreground_ids(cloud, world)
        src = cloud.source_times
        for tr in world.trajectories:
            mine = owner == tr.object_id
            if not mine.any():
                continue
            now = pose_at(tr, t)
            for ts in np.unique(src[mine]):
                sel = mine & (src == ts)
                moved = rectify_points(cloud.positions[sel], pose_at(tr, float(ts)), now)
                worst = max(worst, float(surface_distance(moved, tr.box_at(t)).max()))
                n_pts += int(sel.sum())
                if ts < t and tr.speed > 0:
                    n_moving += int(sel.sum())
    secs = time.perf_counter() - t0
    ok = worst <= 1e-9 and n_moving > 0 and secs < 10
    return Criterion(
        1, "rectification exactness", ok,
        f"max surface distance {worst:.2e} m over {n_pts} points ({n_moving} lagged on movers) in {secs:.1f} s",
    )


# 2


def c2_propagation(ctx: Context) -> Criterion:
    params = ScenarioParams(object_count=30, dynamic_fraction=1.0, turn_fraction=0.0, duration=3.0)
    zero = zero_noise_profile(name="profile-P")
    worst, n_checked, n_empty = 0.0, 0, 0
    bitwise_ok, n_eq5 = True, 0
    for seed in range(3):
        world = generate_scenario(params, seed)
        cc = CollabConfig(
            profiles={"profile-P": zero}, flow_noise=FlowNoiseProfile(), estimator="lag_weighted", pool_margin=0.0
        )
        ep = Episode(world, cc, seed)
        eq5 = ep.derive(dataclasses.replace(cc, estimator="eq5"))
        t_i = 1.0
        for aid in (IRSU_ID, 2, 3):
            msg = ep.detection_message(aid, t_i)
            msg5 = eq5.detection_message(aid, t_i)
            gts = world.boxes_at(t_i)
            to_sender = invert(msg.pose)
            for (b, f), (_, f5) in zip(msg.entries, msg5.entries):
                oid = min(gts, key=lambda g: np.linalg.norm(np.array(g[1].transformed(to_sender).center) - b.center))[0]
                tr = world.trajectory(oid)
                if tr.kind != "cv" or tr.speed == 0:
                    continue
                if not any(f):
                    # no lagged point landed in the box, so there is no velocity to check
                    n_empty += 1
                    continue
                for lag in (0.1, 0.2, 0.3, 0.4, 0.5):
                    t = t_i + lag
                    ego_pose = world.ego.pose_at(t)
                    m = modar_to_ego_frame(propagate_modar(box_to_modar(b, f, aid, t_i, msg.span), t), msg.pose, ego_pose)
                    truth = transform_point(invert(ego_pose), tr.box_at(t).center)
                    worst = max(worst, float(np.linalg.norm(np.array(m.position) - truth)))
                    n_checked += 1
                    m5 = box_to_modar(b, f5, aid, t_i, msg5.span)
                    got = propagate_modar(m5, t, Estimator.EQ5).position
                    k = (t - t_i) / msg5.span
                    want = tuple(p + k * fi for p, fi in zip(b.center, f5))
                    bitwise_ok &= got == want
                    n_eq5 += 1
    ok = worst <= 1e-6 and bitwise_ok and n_checked > 0
    return Criterion(
        2, "propagation exactness", ok,
        f"max center error {worst:.2e} m over {n_checked} checks ({n_empty} boxes without lagged points skipped); EQ5 bitwise {'ok' if bitwise_ok else 'MISMATCH'} on {n_eq5}",
    )


# 3


def brute_force_ap(dets: list, gts: list, threshold: float) -> Fraction:
    """AP from explicit enumeration of every score cutoff, in exact arithmetic."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    if not gts:
        return Fraction(1) if not dets else Fraction(0)
    taken = set()
    flags = []
    for i in order:
        d = dets[i]
        best, best_d = None, None
        for j, g in enumerate(gts):
            if j in taken:
                continue
            dist = math.hypot(g.center[0] - d.center[0], g.center[1] - d.center[1])
            if dist <= threshold and (best_d is None or dist < best_d):
                best, best_d = j, dist
        if best is not None:
            taken.add(best)
        flags.append(best is not None)
    points = []
    for k in range(1, len(flags) + 1):
        tp = sum(flags[:k])
        points.append((Fraction(tp, len(gts)), Fraction(tp, k)))
    total = Fraction(0)
    for i in range(11, 101):
        r = Fraction(i, 100)
        ps = [p for rec, p in points if rec >= r]
        if ps:
            total += max(max(ps) - Fraction(1, 10), Fraction(0)) * Fraction(1, 100)
    return total / Fraction(81, 100)


def random_ap_instance(r: np.random.Generator) -> tuple:
    n_gt = int(r.integers(0, 11))
    n_det = int(r.integers(0, 21 - n_gt))
    gts = [Box((*r.uniform(-10, 10, 2), 0.0), (1.9, 4.5, 1.6)) for _ in range(n_gt)]
    dets = []
    for _ in range(n_det):
        if gts and r.random() < 0.6:
            g = gts[int(r.integers(len(gts)))]
            c = np.array(g.center[:2]) + r.normal(0, 1.0, 2)
        else:
            c = r.uniform(-10, 10, 2)
        dets.append(Box((*c, 0.0), (1.9, 4.5, 1.6), 0.0, float(r.random())))
    th = float(r.choice([0.5, 1.0, 2.0, 4.0]))
    return dets, gts, th


def c3_map_oracle(ctx: Context, n: int = 300) -> Criterion:
    r = np.random.default_rng(3)
    worst = 0.0
    for _ in range(n):
        dets, gts, th = random_ap_instance(r)
        worst = max(worst, abs(average_precision(dets, gts, th) - float(brute_force_ap(dets, gts, th))))
    return Criterion(3, "mAP oracle equivalence", worst <= 1e-12, f"max |AP - brute force| {worst:.1e} over {n} instances")


# 4, 5, 6


ORDER = ("NONE", "LATE_ASYNC", "LATE_ASYNC_PROP", "LATE_SYNC", "LATE_EARLY")


def c4_ordering(ctx: Context) -> Criterion:
    _, summary, secs = ctx.default_run()
    m = _means(summary, "any_agent")
    ok = (
        m["NONE"] < m["LATE_ASYNC"] < m["LATE_ASYNC_PROP"] <= m["LATE_SYNC"]
        and m["LATE_EARLY"] > m["LATE_ASYNC_PROP"]
        and secs < 600
    )
    return Criterion(4, "strategy ordering (any_agent, 30 seeds)", ok, f"{_fmt(m, ORDER)}; ensemble {secs:.0f} s")


def c5_recovery(ctx: Context) -> Criterion:
    _, summary, _ = ctx.default_run()
    ratio = recovery_ratio(_means(summary, "any_agent"))
    return Criterion(5, "propagation recovery ratio", ratio >= 0.85, f"{ratio:.3f} (need >= 0.85)")


def c6_ego_only(ctx: Context) -> Criterion:
    cfg = cfgmod.ego_only_config()
    out = ctx.workdir / "ego_only"
    summary = run_experiment(cfg, out)
    m = _means(summary, "ego_only")
    late = ("LATE_SYNC", "LATE_ASYNC", "LATE_ASYNC_PROP")
    ok = all(m[s] < m["NONE"] for s in late) and m["LATE_EARLY"] >= m["NONE"]
    return Criterion(6, "late variants below single-agent (ego_only)", ok, _fmt(m, ("NONE",) + late + ("LATE_EARLY",)))


# 7


def c7_bandwidth(ctx: Context) -> Criterion:
    pose = Pose.identity()
    boxes = tuple((Box((float(i), 0.0, 0.0), (1.9, 4.5, 1.6), 0.1, 0.5), (0.1, 0.2, 0.0)) for i in range(100))
    det_bytes = len(encode_detection(DetectionMessage(0, 1.0, pose, 0.4, boxes)))
    params = cfgmod.default_scenario()
    world = generate_scenario(params, 0)
    ep = Episode(world, CollabConfig(), 0)
    times = frame_times(ep)[:10]
    early_bytes = sum(len(encode_early(ep.early_message(IRSU_ID, t))) for t in times)
    ok = det_bytes <= 0.01e6 and early_bytes >= 100 * det_bytes and len(times) == 10
    return Criterion(
        7, "bandwidth", ok,
        f"100-box detection message {det_bytes} B ({det_bytes / 1e6:.4f} MB); 10 early messages {early_bytes / 1e6:.2f} MB = {early_bytes / det_bytes:.0f}x",
    )


# 8


def c8_flow_metrics(ctx: Context) -> Criterion:
    r = np.random.default_rng(8)
    gt = r.uniform(-2, 2, size=(100_000, 3))
    exact = flow_metrics(gt.copy(), gt)
    ok_exact = exact == {"EPE": 0.0, "AccS": 100.0, "AccR": 100.0, "ROutliers": 0.0}
    noisy = perturb_flow(gt, FlowNoiseProfile(sigma=0.05), seed=8, foreground=np.ones(len(gt), dtype=bool))
    epe = flow_metrics(noisy, gt)["EPE"]
    # independent sampling oracle: the mean norm of fresh N(0, 0.05^2 I) draws
    mc = float(np.linalg.norm(np.random.default_rng(12345).normal(0.0, 0.05, size=(1_000_000, 3)), axis=1).mean())
    rel = abs(epe - mc) / mc
    return Criterion(
        8, "flow metrics", ok_exact and rel <= 0.05,
        f"exact {exact}; noisy EPE {epe:.5f} vs Monte-Carlo {mc:.5f} ({100 * rel:.2f}% off)",
    )


# 9, 10


def c9_agents(ctx: Context) -> Criterion:
    cfg = cfgmod.agents_sweep_config()
    table = sweep_table(sweep_agents(cfg), "agents")
    means = [100 * r["map_mean"] for r in table]
    sems = [100 * r["map_sem"] for r in table]
    steps = np.diff(means)
    monotone = all(steps[i] >= -sems[i + 1] for i in range(len(steps)))
    largest = int(np.argmax(steps)) == 0
    series = " ".join(f"{r['agents']}:{m:.2f}" for r, m in zip(table, means))
    return Criterion(9, "network-size sweep", monotone and largest, f"{series}; steps {np.round(steps, 2).tolist()}")


def c10_heterogeneity(ctx: Context) -> Criterion:
    cfg = cfgmod.heterogeneity_config()
    table = sweep_table(sweep_heterogeneity(cfg), "mix")
    le = {r["mix"]: 100 * r["map_mean"] for r in table if r["strategy"] == "LATE_EARLY"}
    lp = {r["mix"]: 100 * r["map_mean"] for r in table if r["strategy"] == "LATE_ASYNC_PROP"}
    mixes = sorted(le)
    above = all(le[k] >= lp[k] for k in mixes)
    slope = float(np.polyfit(mixes, [le[k] for k in mixes], 1)[0])
    ok = above and slope < 0 and le[mixes[-1]] < le[mixes[0]]
    series = " ".join(f"{k}:{le[k]:.2f}/{lp[k]:.2f}" for k in mixes)
    return Criterion(10, "heterogeneity sweep", ok, f"mix:LATE_EARLY/LATE_ASYNC_PROP {series}; slope {slope:.2f}")


# 11, 12


def c11_determinism(ctx: Context) -> Criterion:
    # a serial run against a two-worker run, so scheduling order is exercised too
    cfg = cfgmod.ExperimentConfig(seeds=(0, 1, 2)).validate()
    run_experiment(cfg, ctx.workdir / "det_a", keep_raw=False)
    run_experiment(cfg, ctx.workdir / "det_b", parallel=2, keep_raw=False)
    a = (ctx.workdir / "det_a" / "results.csv").read_bytes()
    b = (ctx.workdir / "det_b" / "results.csv").read_bytes()
    return Criterion(11, "determinism", a == b, f"results.csv {len(a)} B, {'identical' if a == b else 'DIFFERENT'}")


def c12_budget(ctx: Context) -> Criterion:
    cfg = cfgmod.ExperimentConfig(scenario=dataclasses.replace(cfgmod.default_scenario(), duration=20.0), seeds=(0,))
    cfg.validate()
    t0 = time.perf_counter()
    run_experiment(cfg, ctx.workdir / "budget", keep_raw=False)
    secs = time.perf_counter() - t0
    frames = int(round(cfg.scenario.duration * cfg.scenario.frame_rate))
    return Criterion(12, "end-to-end budget", secs < 60, f"{frames}-frame scenario, 6 agents, 6 strategies in {secs:.1f} s")


CRITERIA: dict = {
    1: c1_rectification,
    2: c2_propagation,
    3: c3_map_oracle,
    4: c4_ordering,
    5: c5_recovery,
    6: c6_ego_only,
    7: c7_bandwidth,
    8: c8_flow_metrics,
    9: c9_agents,
    10: c10_heterogeneity,
    11: c11_determinism,
    12: c12_budget,
}


def run_one(number: int, ctx: Context) -> Criterion:
    t0 = time.perf_counter()
    try:
        res = CRITERIA[number](ctx)
    except Exception as e:  # noqa: BLE001 - a crash is a failed criterion, not an aborted suite
        res = Criterion(number, CRITERIA[number].__name__, False, f"raised {type(e).__name__}: {e}")
    res.seconds = time.perf_counter() - t0
    return res


def run_criteria(only: Optional[list] = None, workdir=None, echo: Callable = print) -> list:
    with tempfile.TemporaryDirectory() as tmp:
        ctx = Context(Path(workdir) if workdir else Path(tmp))
        results = []
        for n in only or sorted(CRITERIA):
            res = run_one(n, ctx)
            echo(res.line())
            results.append(res)
        return results
