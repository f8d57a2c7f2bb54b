"""Center-distance mAP, in the style of the nuScenes detection benchmark."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import Box

THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
MIN_RECALL = 0.1
MIN_PRECISION = 0.1
RECALL_SAMPLES = 101
# recall samples are i/100; only those strictly above MIN_RECALL count
_FIRST_SAMPLE = 11


def match_detections(dets: Sequence[Box], gts: Sequence[Box], threshold: float) -> list:
    """Greedy matching in descending score order.

    Returns ``(det, gt_index or None)`` pairs in processing order. Each
    detection takes the nearest still-unmatched ground truth by BEV center
    distance if it lies within ``threshold``; equal distances go to the lower
    index.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    g = np.array([b.center[:2] for b in gts]).reshape(-1, 2)
    taken = np.zeros(len(gts), dtype=bool)
    out = []
    for i in order:
        d = dets[i]
        best = None
        if len(g):
            dist = np.hypot(g[:, 0] - d.center[0], g[:, 1] - d.center[1])
            dist[taken] = np.inf
            j = int(np.argmin(dist))
            if dist[j] <= threshold:
                best = j
                taken[j] = True
        out.append((d, best))
    return out


def ap_from_matches(scores: Sequence[float], is_tp: Sequence[bool], n_gt: int) -> float:
    """Interpolated AP over 101 recall samples, floored at recall and precision 0.1.

    ``scores`` and ``is_tp`` describe all detections, in any order; ties keep
    their given order.
    """
    scores = np.asarray(scores, dtype=float)
    is_tp = np.asarray(is_tp, dtype=bool)
    if n_gt == 0:
        return 1.0 if len(scores) == 0 else 0.0
    if not len(scores):
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(is_tp[order])
    k = np.arange(1, len(order) + 1)
    prec = tp / k
    # running max from the right: best precision at recall >= current
    best_from = np.maximum.accumulate(prec[::-1])[::-1]
    total = 0.0
    for i in range(_FIRST_SAMPLE, RECALL_SAMPLES):
        # first operating point whose recall reaches i/100, compared in integers
        pos = np.searchsorted(tp * (RECALL_SAMPLES - 1), i * n_gt, side="left")
        if pos >= len(tp):
            continue
        total += max(best_from[pos] - MIN_PRECISION, 0.0)
    ap = total / (RECALL_SAMPLES - 1) / (1.0 - MIN_PRECISION) / (1.0 - MIN_RECALL)
    # rounding can push a perfect score a few ulps past 1
    return min(ap, 1.0)


def accumulate(frames: Iterable, threshold: float, class_id: Optional[int] = None) -> tuple:
    """Pool matches over ``(dets, gts)`` frames: (scores, is_tp, n_gt)."""
    scores, tps, n_gt = [], [], 0
    for dets, gts in frames:
        if class_id is not None:
            dets = [d for d in dets if d.class_id == class_id]
            gts = [g for g in gts if g.class_id == class_id]
        n_gt += len(gts)
        for d, m in match_detections(dets, gts, threshold):
            scores.append(d.score)
            tps.append(m is not None)
    return scores, tps, n_gt


def average_precision(dets: Sequence[Box], gts: Sequence[Box], threshold: float) -> float:
    return average_precision_frames([(dets, gts)], threshold)


def average_precision_frames(frames: Sequence, threshold: float, class_id: Optional[int] = None) -> float:
    scores, tps, n_gt = accumulate(frames, threshold, class_id)
    return ap_from_matches(scores, tps, n_gt)


@dataclass
class EvalResult:
    per_threshold_ap: dict
    map_score: float
    tp: dict = field(default_factory=dict)
    fp: dict = field(default_factory=dict)
    fn: dict = field(default_factory=dict)
    gt_mode: str = "any_agent"
    bytes_per_frame: int = 0

    @property
    def map_percent(self) -> float:
        return 100.0 * self.map_score


def mean_ap_frames(
    frames: Sequence,
    gt_mode: str = "any_agent",
    bytes_per_frame: int = 0,
    per_class: bool = False,
) -> EvalResult:
    frames = [(list(d), list(g)) for d, g in frames]
    classes = [None]
    if per_class:
        found = sorted({g.class_id for _, gs in frames for g in gs})
        classes = found or [None]
    aps, tp, fp, fn = {}, {}, {}, {}
    for th in THRESHOLDS:
        vals = []
        tp[th] = fp[th] = fn[th] = 0
        for c in classes:
            scores, tps, n_gt = accumulate(frames, th, c)
            vals.append(ap_from_matches(scores, tps, n_gt))
            hits = int(np.sum(tps))
            tp[th] += hits
            fp[th] += len(tps) - hits
            fn[th] += n_gt - hits
        aps[th] = float(np.mean(vals))
    return EvalResult(aps, float(np.mean(list(aps.values()))), tp, fp, fn, gt_mode, bytes_per_frame)


def mean_ap(dets: Sequence[Box], gts: Sequence[Box], gt_mode: str = "any_agent", per_class: bool = False) -> EvalResult:
    return mean_ap_frames([(dets, gts)], gt_mode, per_class=per_class)


@dataclass(frozen=True)
class RunRecord:
    strategy: str
    seed: int
    gt_mode: str
    map_score: float
    per_threshold_ap: tuple = ()
    bytes_mean: float = 0.0
    group: str = ""


def aggregate_runs(records: Sequence[RunRecord], strategy_order: Optional[Sequence[str]] = None) -> list:
    """Mean and population std of mAP per (group, strategy, gt_mode), in a stable order."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.group, r.strategy, r.gt_mode), []).append(r)
    order = list(strategy_order or [])

    def key(k):
        g, s, m = k
        return (g, order.index(s) if s in order else len(order), s, m)

    rows = []
    for k in sorted(groups, key=key):
        rs = sorted(groups[k], key=lambda r: r.seed)
        vals = np.array([r.map_score for r in rs])
        rows.append(
            {
                "group": k[0],
                "strategy": k[1],
                "gt_mode": k[2],
                "n": len(rs),
                "map_mean": float(vals.mean()),
                "map_std": float(vals.std()),
                "map_sem": float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0,
                "bytes_mean": float(np.mean([r.bytes_mean for r in rs])),
            }
        )
    return rows
