"""Experiment driver: seeds x strategies x ground-truth modes, plus the two sweeps.

Outputs are written in a fixed order with fixed float formatting, so the
bytes on disk do not depend on the worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import random
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .collab import Episode, StrategyId, run_strategy
from .config import ExperimentConfig
from .errors import ConfigError
from .evaluation import THRESHOLDS, RunRecord, aggregate_runs, mean_ap_frames
from .geometry import Box
from .scene import AGENT_ORDER, generate_scenario

RESULT_HEADER = ("strategy", "seed", "gt_mode", "map_score") + tuple(f"ap_{th:.1f}" for th in THRESHOLDS) + ("bytes_mean",)
SWEEP_HEADER = ("group", "strategy", "seed", "gt_mode", "map_score", "bytes_mean")


def fmt(x: float) -> str:
    return f"{x:.6f}"


def box_to_list(b: Box) -> list:
    return [*b.center, *b.size, b.yaw, b.score, b.class_id]


def box_from_list(v: Sequence) -> Box:
    return Box(v[0:3], v[3:6], v[6], v[7], int(v[8]))


def frame_times(ep: Episode) -> list:
    """Query times on the frame grid, starting once every sender has a full sequence behind it."""
    rate = ep.world.frame_rate
    k0 = math.ceil(ep.earliest_query() * rate - 1e-9)
    k1 = math.floor(ep.world.duration * rate + 1e-9)
    return [k / rate for k in range(k0, k1 + 1)]


def evaluate_strategy(ep: Episode, strategy: str, times: Sequence[float], gt_modes: Sequence[str], group: str = ""):
    """One strategy over all frames of an episode: (records per gt mode, raw frames)."""
    frames = {m: [] for m in gt_modes}
    raw = []
    nbytes = []
    for t in times:
        res = run_strategy(strategy, ep.world, t, episode=ep)
        nbytes.append(res.bytes_exchanged)
        entry = {"t": t, "bytes": res.bytes_exchanged, "dets": [box_to_list(b) for b in res.detections], "gt": {}}
        for m in gt_modes:
            gt = ep.ground_truth(t, m)
            frames[m].append((res.detections, gt))
            entry["gt"][m] = [box_to_list(b) for b in gt]
        raw.append(entry)
    bytes_mean = float(np.mean(nbytes)) if nbytes else 0.0
    records = []
    for m in gt_modes:
        r = mean_ap_frames(frames[m], m, int(round(bytes_mean)))
        records.append(
            RunRecord(strategy, ep.seed, m, r.map_score, tuple(r.per_threshold_ap[th] for th in THRESHOLDS), bytes_mean, group)
        )
    return records, raw


def _seed_job(args):
    cfg, seed = args
    world = generate_scenario(cfg.scenario, seed)
    ep = Episode(world, cfg.collab(), seed)
    times = frame_times(ep)
    records, raws = [], {}
    for s in cfg.strategies:
        s = StrategyId.parse(s).value
        rec, raw = evaluate_strategy(ep, s, times, cfg.gt_modes)
        records.extend(rec)
        raws[s] = raw
    return seed, records, raws


def _map_jobs(fn, jobs: list, parallel: int) -> list:
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _order_records(records: list, strategies: Sequence[str], gt_modes: Sequence[str]) -> list:
    s_idx = {StrategyId.parse(s).value: i for i, s in enumerate(strategies)}
    m_idx = {m: i for i, m in enumerate(gt_modes)}
    return sorted(records, key=lambda r: (r.group, s_idx.get(r.strategy, len(s_idx)), r.seed, m_idx.get(r.gt_mode, 0)))


def results_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for r in records:
        w.writerow([r.strategy, r.seed, r.gt_mode, fmt(100 * r.map_score), *(fmt(100 * a) for a in r.per_threshold_ap), fmt(r.bytes_mean)])
    return buf.getvalue()


def _summary_rows(records, strategies) -> list:
    rows = aggregate_runs(records, [StrategyId.parse(s).value for s in strategies])
    for row in rows:
        for k in ("map_mean", "map_std", "map_sem"):
            row[k] = round(100 * row[k], 6)
        row["bytes_mean"] = round(row["bytes_mean"], 6)
    return rows


def _config_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["scenario"]["lidar"]["vertical_fov"] = list(cfg.scenario.lidar.vertical_fov)
    d["scenario"]["agent_profiles"] = {str(k): v for k, v in cfg.scenario.agent_profiles.items()}
    return d


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise RuntimeError(f"cannot write {path}: {e.strerror}") from None


def run_experiment(cfg: ExperimentConfig, out_dir=None, parallel: int = 1, keep_raw: bool = True) -> dict:
    """Run every (strategy, seed, gt_mode); write results.csv, summary.json and raw detections."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    done = _map_jobs(_seed_job, [(cfg, s) for s in cfg.seeds], parallel)
    records = []
    for seed, recs, raws in sorted(done, key=lambda x: x[0]):
        records.extend(recs)
        if keep_raw:
            for strategy, raw in raws.items():
                doc = {"strategy": strategy, "seed": seed, "frames": raw}
                _write(out / "raw" / strategy / f"seed{seed:04d}.json", json.dumps(doc))
    records = _order_records(records, cfg.strategies, cfg.gt_modes)
    _write(out / "results.csv", results_csv(records))
    summary = {"rows": _summary_rows(records, cfg.strategies), "config": _config_dict(cfg)}
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def recovery_ratio(means: dict) -> float:
    """Share of the sync-vs-async gap that propagation wins back."""
    gap = means["LATE_SYNC"] - means["LATE_ASYNC"]
    return (means["LATE_ASYNC_PROP"] - means["LATE_ASYNC"]) / gap if gap else float("nan")


def strategy_means(records: Sequence[RunRecord], gt_mode: str) -> dict:
    by: dict = {}
    for r in records:
        if r.gt_mode == gt_mode:
            by.setdefault(r.strategy, []).append(r.map_score)
    return {k: float(np.mean(v)) for k, v in by.items()}


# sweeps


def _agents_job(args):
    cfg, seed = args
    world = generate_scenario(cfg.scenario, seed)
    base = Episode(world, cfg.collab(), seed)
    times = frame_times(base)
    strategy = StrategyId.parse(cfg.sweep.agents_strategy).value
    records = []
    for n in cfg.sweep.agent_counts:
        ep = base.derive(cfg.collab(participants=AGENT_ORDER[:n]))
        rec, _ = evaluate_strategy(ep, strategy, times, ("any_agent",), group=f"agents={n}")
        records.extend(rec)
    return records


def sweep_agents(cfg: ExperimentConfig, parallel: int = 1) -> list:
    """mAP per seed as agents join in roster order (ego, IRSU, then CAVs)."""
    done = _map_jobs(_agents_job, [(cfg, s) for s in cfg.seeds], parallel)
    return _order_records([r for recs in done for r in recs], [cfg.sweep.agents_strategy], ("any_agent",))


def heterogeneity_overrides(cfg: ExperimentConfig, mix: int) -> dict:
    """The first ``mix`` agents in roster order switch to the heterogeneity profile."""
    ids = AGENT_ORDER[: cfg.scenario.agent_count]
    if not 0 <= mix <= len(ids):
        raise ConfigError(f"heterogeneity mix {mix} outside 0..{len(ids)}")
    return {aid: cfg.sweep.heterogeneity_profile for aid in ids[:mix]}


def _hetero_job(args):
    cfg, seed = args
    world = generate_scenario(cfg.scenario, seed)
    base = Episode(world, cfg.collab(), seed)
    times = frame_times(base)
    records = []
    for mix in range(cfg.scenario.agent_count + 1):
        ep = base.derive(cfg.collab(profile_overrides=heterogeneity_overrides(cfg, mix)))
        for s in cfg.sweep.heterogeneity_strategies:
            rec, _ = evaluate_strategy(ep, StrategyId.parse(s).value, times, ("any_agent",), group=f"mix={mix}")
            records.extend(rec)
    return records


def sweep_heterogeneity(cfg: ExperimentConfig, parallel: int = 1) -> list:
    """mAP per seed and strategy for 0..N agents running the heterogeneity profile."""
    done = _map_jobs(_hetero_job, [(cfg, s) for s in cfg.seeds], parallel)
    return _order_records([r for recs in done for r in recs], cfg.sweep.heterogeneity_strategies, ("any_agent",))


def sweep_table(records: Sequence[RunRecord], key: str) -> list:
    """Per-group aggregates sorted by the integer after ``key=`` in the group label."""
    rows = aggregate_runs(records)
    for row in rows:
        row[key] = int(row["group"].split("=")[1])
    return sorted(rows, key=lambda r: (r[key], r["strategy"]))


def sweep_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in sorted(records, key=lambda r: (int(r.group.split("=")[1]), r.strategy, r.seed)):
        w.writerow([r.group, r.strategy, r.seed, r.gt_mode, fmt(100 * r.map_score), fmt(r.bytes_mean)])
    return buf.getvalue()


def write_sweep(records: Sequence[RunRecord], out_dir, name: str, key: str) -> list:
    out = Path(out_dir)
    _write(out / f"{name}.csv", sweep_csv(records))
    table = sweep_table(records, key)
    for row in table:
        for k in ("map_mean", "map_std", "map_sem"):
            row[k] = round(100 * row[k], 6)
    _write(out / f"{name}_summary.json", json.dumps(table, indent=2, sort_keys=True) + "\n")
    return table


# spot check


def verify_results(out_dir, n_rows: int = 5, seed: int = 0) -> list:
    """Recompute ``n_rows`` random rows of results.csv from the stored raw detections.

    Returns ``(row, recomputed map_score string, ok)`` triples.
    """
    out = Path(out_dir)
    with open(out / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    picks = random.Random(seed).sample(rows, min(n_rows, len(rows)))
    checked = []
    for row in picks:
        path = out / "raw" / row["strategy"] / f"seed{int(row['seed']):04d}.json"
        doc = json.loads(path.read_text())
        frames = [
            ([box_from_list(v) for v in f["dets"]], [box_from_list(v) for v in f["gt"][row["gt_mode"]]])
            for f in doc["frames"]
        ]
        got = fmt(100 * mean_ap_frames(frames, row["gt_mode"]).map_score)
        checked.append((row, got, got == row["map_score"]))
    return checked
