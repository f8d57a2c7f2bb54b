from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from v2xcollab.acceptance import brute_force_ap, random_ap_instance
from v2xcollab.evaluation import (
    RunRecord,
    aggregate_runs,
    average_precision,
    match_detections,
    mean_ap,
)
from v2xcollab.geometry import Box

SIZE = (1.9, 4.5, 1.6)


def box(x, y=0.0, score=1.0):
    return Box((x, y, 0.0), SIZE, 0.0, score)


class TestMatching:
    def test_exact(self):
        assert match_detections([box(0)], [box(0)], 0.5)[0][1] == 0

    def test_too_far(self):
        assert match_detections([box(3)], [box(0)], 2.0)[0][1] is None

    def test_greedy_by_score(self):
        out = match_detections([box(0.1, score=0.8), box(0.2, score=0.9)], [box(0)], 1.0)
        assert [(d.score, m) for d, m in out] == [(0.9, 0), (0.8, None)]

    @given(st.integers(0, 2**32 - 1))
    def test_no_double_match(self, seed):
        dets, gts, th = random_ap_instance(np.random.default_rng(seed))
        matched = [m for _, m in match_detections(dets, gts, th) if m is not None]
        assert len(matched) == len(set(matched)) <= min(len(dets), len(gts))


class TestAp:
    def test_perfect(self):
        gts = [box(i * 10.0) for i in range(5)]
        assert average_precision(gts, gts, 0.5) == pytest.approx(1.0, abs=1e-12)

    def test_no_detections(self):
        assert average_precision([], [box(0)], 2.0) == 0.0

    def test_low_scored_true_positive(self):
        dets = [box(20.0, score=0.9), box(0.0, score=0.5)]
        assert average_precision(dets, [box(0)], 1.0) == pytest.approx(0.4 * 0.9 / 0.81, abs=1e-12)

    def test_hand_example_against_oracle(self):
        dets = [box(20.0, score=0.9), box(0.0, score=0.5)]
        assert brute_force_ap(dets, [box(0)], 1.0) == Fraction(4, 9)

    def test_empty_vs_empty(self):
        assert mean_ap([], []).map_score == 1.0

    def test_uniform_displacement(self):
        gts = [box(i * 10.0) for i in range(4)]
        dets = [box(i * 10.0 + 1.5) for i in range(4)]
        r = mean_ap(dets, gts)
        assert r.per_threshold_ap == {0.5: 0.0, 1.0: 0.0, 2.0: pytest.approx(1.0), 4.0: pytest.approx(1.0)}
        assert r.map_score == pytest.approx(0.5) and r.map_percent == pytest.approx(50.0)

    @given(st.integers(0, 2**32 - 1))
    def test_matches_brute_force(self, seed):
        dets, gts, th = random_ap_instance(np.random.default_rng(seed))
        assert abs(average_precision(dets, gts, th) - float(brute_force_ap(dets, gts, th))) <= 1e-12

    @given(st.integers(0, 2**32 - 1))
    def test_bounded_and_monotone_in_threshold(self, seed):
        dets, gts, _ = random_ap_instance(np.random.default_rng(seed))
        aps = [average_precision(dets, gts, th) for th in (0.5, 1.0, 2.0, 4.0)]
        assert all(0.0 <= a <= 1.0 for a in aps)
        assert all(a <= b + 1e-12 for a, b in zip(aps, aps[1:]))


class TestAggregate:
    def test_single(self):
        rows = aggregate_runs([RunRecord("NONE", 0, "any_agent", 0.6)])
        assert rows[0]["map_mean"] == 0.6 and rows[0]["map_std"] == 0.0

    def test_population_std(self):
        rows = aggregate_runs([RunRecord("NONE", s, "any_agent", v) for s, v in ((0, 0.6), (1, 0.8))])
        assert rows[0]["map_mean"] == pytest.approx(0.7) and rows[0]["map_std"] == pytest.approx(0.1)

    def test_stable_order(self):
        recs = [RunRecord(s, k, m, 0.5) for s in ("LATE_SYNC", "NONE") for k in (1, 0) for m in ("ego_only", "any_agent")]
        order = ("NONE", "LATE_SYNC")
        a = aggregate_runs(recs, order)
        assert a == aggregate_runs(list(reversed(recs)), order)
        assert [r["strategy"] for r in a] == ["NONE", "NONE", "LATE_SYNC", "LATE_SYNC"]
