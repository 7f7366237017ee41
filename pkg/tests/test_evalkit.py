import numpy as np
import pytest

from cueengine.beatgrid import BeatGrid
from cueengine.dataset import TrackRecord
from cueengine.evalkit import (
    EvalReport,
    average_precision,
    bar_histogram,
    build_truth_sets,
    cosine_hist,
    evaluate,
    evaluate_scenario,
    match,
    phrase_truth_seconds,
    prf,
    tolerance_seconds,
)
from oracles import ap_from_pr_curve

GRID = BeatGrid(bpm=120)


def record(key="a", bpm=120.0, cues=(32.0, 96.0), duration=200.0, offset=0.0):
    return TrackRecord(
        artist=key, title=key, grid=BeatGrid(bpm=bpm, grid_offset=offset),
        cues=tuple(cues), duration=duration,
    )


class TestMatch:
    def test_hit_within_window(self):
        res = match([(10.0, 0.99)], [10.1], tol=0.25)
        assert (res.n_tp, res.n_fp, res.n_fn) == (1, 0, 0)

    def test_one_to_one_guard(self):
        res = match([(10.0, 0.99), (10.2, 0.95)], [10.1], tol=0.25)
        assert (res.n_tp, res.n_fp, res.n_fn) == (1, 1, 0)
        # the higher-scored prediction claims the truth
        assert res.labels[0] == (10.0, 0.99, True)

    def test_empty_predictions(self):
        res = match([], [5.0], tol=0.25)
        assert (res.n_tp, res.n_fp, res.n_fn) == (0, 0, 1)

    def test_nearest_truth_claimed(self):
        res = match([(10.0, 0.9)], [9.8, 10.05], tol=0.3)
        assert res.n_tp == 1
        res2 = match([(10.0, 0.9), (9.75, 0.8)], [9.8, 10.05], tol=0.3)
        assert res2.n_tp == 2

    def test_no_double_assignment_random(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            preds = [(float(t), float(s)) for t, s in
                     zip(rng.uniform(0, 50, 20), rng.uniform(0, 1, 20))]
            truth = sorted(rng.uniform(0, 50, 10).tolist())
            res = match(preds, truth, tol=0.5)
            assert res.n_tp <= len(truth)
            assert res.n_tp + res.n_fp == len(preds)
            assert res.n_tp + res.n_fn == len(truth)


class TestPRF:
    def test_hand_case(self):
        p, r, f1 = prf(3, 1, 2)
        assert p == 0.75
        assert r == pytest.approx(0.6)
        assert f1 == pytest.approx(2 * 0.45 / 1.35)

    def test_zero_predictions_convention(self):
        assert prf(0, 0, 5) == (0.0, 0.0, 0.0)

    def test_perfect(self):
        assert prf(7, 0, 0) == (1.0, 1.0, 1.0)


class TestAveragePrecision:
    def test_single_hit(self):
        assert average_precision([True], 1) == 1.0

    def test_tp_fp_tp(self):
        assert average_precision([True, False, True], 2) == pytest.approx((1.0 + 2 / 3) / 2, abs=1e-12)

    def test_all_fp(self):
        assert average_precision([False, False], 3) == 0.0

    def test_no_truth(self):
        assert average_precision([True], 0) == 0.0

    def test_matches_pr_curve_oracle(self):
        rng = np.random.default_rng(32)
        for _ in range(200):
            n = int(rng.integers(1, 100))
            labels = (rng.uniform(size=n) < 0.4).tolist()
            n_truth = int(sum(labels) + rng.integers(0, 10))
            got = average_precision(labels, n_truth)
            assert got == pytest.approx(ap_from_pr_curve(labels, n_truth), abs=1e-12)


class TestCosine:
    def test_identical_multisets(self):
        grids = {"a": GRID}
        times = {"a": [0.0, 32.0, 32.0]}
        assert cosine_hist(times, times, grids) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_supports(self):
        grids = {"a": GRID}
        assert cosine_hist({"a": [0.0]}, {"a": [32.0]}, grids) == 0.0

    def test_hand_case(self):
        grids = {"a": GRID}
        pred = {"a": [0.0, 32.0]}   # bars 0 and 16
        truth = {"a": [0.0, 0.0]}   # bar 0 twice
        assert cosine_hist(pred, truth, grids) == pytest.approx(2 / (np.sqrt(2) * 2), abs=1e-12)

    def test_scale_invariance(self):
        grids = {"a": GRID}
        pred = {"a": [0.0, 32.0, 64.0]}
        truth = {"a": [0.0, 32.0]}
        base = cosine_hist(pred, truth, grids)
        tripled = {"a": pred["a"] * 3}
        assert cosine_hist(tripled, truth, grids) == pytest.approx(base, abs=1e-12)

    def test_empty_is_zero(self):
        assert cosine_hist({}, {"a": [1.0]}, {"a": GRID}) == 0.0

    def test_cap_bounds_domain(self):
        grids = {"a": GRID}
        hist = bar_histogram({"a": [0.0, 10000.0]}, grids, n_bars_cap=64)
        assert hist.sum() == 1  # far position falls outside the domain


class TestToleranceWindows:
    def test_half_is_half(self):
        for bpm in (95.0, 128.0, 174.0):
            grid = BeatGrid(bpm=bpm)
            assert tolerance_seconds("half_beat", grid) == tolerance_seconds("one_beat", grid) / 2

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            tolerance_seconds("two_beats", GRID)

    def test_tighter_window_never_gains_tps(self):
        rng = np.random.default_rng(33)
        for _ in range(200):
            preds = [(float(t), float(s)) for t, s in
                     zip(rng.uniform(0, 100, 15), rng.uniform(0.5, 1, 15))]
            truth = sorted(rng.uniform(0, 100, 8).tolist())
            t1 = match(preds, truth, tolerance_seconds("one_beat", GRID))
            t_half = match(preds, truth, tolerance_seconds("half_beat", GRID))
            assert t_half.n_tp <= t1.n_tp


class TestPhraseTruth:
    def test_boundaries_are_superset_of_cue_bars(self):
        rec = record(cues=(32.0, 96.0), duration=200.0)  # bars 16, 48
        for phrase_len in (16, 8):
            truth = phrase_truth_seconds(rec, phrase_len)
            assert set(rec.cues) <= set(truth)

    def test_sixteen_bar_truth_positions(self):
        rec = record(cues=(32.0,), duration=128.0)  # bar 16, track 64 bars
        truth = phrase_truth_seconds(rec, 16)
        assert truth == [0.0, 32.0, 64.0, 96.0]

    def test_denser_grid_has_more_positions(self):
        rec = record(cues=(32.0, 96.0), duration=256.0)
        sets = build_truth_sets([rec])
        assert len(sets["bars8"]["a|a"]) >= len(sets["bars16"]["a|a"]) >= len(sets["cues_only"]["a|a"])

    def test_no_cue_track_only_in_cues_only(self):
        rec = record(cues=())
        sets = build_truth_sets([rec])
        assert sets["cues_only"]["a|a"] == []
        assert "a|a" not in sets["bars16"]

    def test_grid_offset_respected(self):
        rec = record(cues=(33.0,), duration=129.0, offset=1.0)  # bar 16 in a shifted grid
        truth = phrase_truth_seconds(rec, 16)
        assert truth[0] == pytest.approx(1.0)
        assert 33.0 in truth


class TestEvaluateScenario:
    def test_perfect_predictions(self):
        preds = {"a|a": [(32.0, 0.99), (96.0, 0.95)]}
        truth = {"a|a": [32.0, 96.0]}
        tol = {"a|a": 0.5}
        res = evaluate_scenario(preds, truth, tol)
        assert (res.precision, res.recall, res.f1) == (1.0, 1.0, 1.0)
        assert res.ap == 1.0

    def test_low_scores_excluded_from_operating_metrics(self):
        preds = {"a|a": [(32.0, 0.6)]}
        truth = {"a|a": [32.0]}
        res = evaluate_scenario(preds, truth, {"a|a": 0.5}, operating_threshold=0.9)
        assert res.recall == 0.0  # below the operating point
        assert res.ap == 1.0  # but AP still sees it

    def test_micro_vs_macro(self):
        preds = {"a": [(1.0, 0.99)], "b": []}
        truth = {"a": [1.0], "b": [5.0]}
        res = evaluate_scenario(preds, truth, {"a": 0.2, "b": 0.2})
        assert res.precision == 1.0
        assert res.recall == 0.5
        assert res.macro_recall == 0.5
        assert res.macro_precision == 0.5  # per-track 1.0 and 0.0


class TestEvaluateEndToEnd:
    def _records(self):
        return [record(key=k, cues=(32.0, 96.0), duration=256.0) for k in ("a", "b")]

    def test_identical_predictions_score_one(self):
        records = self._records()
        preds = {r.track_key: [(t, 0.99) for t in r.cues] for r in records}
        report = evaluate({"perfect": preds}, records)
        res = report.scenarios[("perfect", "one_beat", "cues_only")]
        assert (res.precision, res.recall, res.f1) == (1.0, 1.0, 1.0)
        assert report.cosine["perfect"] == pytest.approx(1.0, abs=1e-12)

    def test_two_beat_shift_misses_everything(self):
        records = self._records()
        shift = 2 * 0.5  # two beats at 120 bpm
        preds = {r.track_key: [(t + shift, 0.99) for t in r.cues] for r in records}
        report = evaluate({"shifted": preds}, records)
        res = report.scenarios[("shifted", "one_beat", "cues_only")]
        assert (res.precision, res.recall, res.f1) == (0.0, 0.0, 0.0)

    def test_half_beat_never_beats_one_beat(self):
        rng = np.random.default_rng(34)
        records = self._records()
        preds = {
            r.track_key: [(float(t), float(s)) for t, s in
                          zip(rng.uniform(0, 250, 12), rng.uniform(0.9, 1.0, 12))]
            for r in records
        }
        report = evaluate({"noise": preds}, records)
        for kind in ("cues_only", "bars16", "bars8"):
            full = report.scenarios[("noise", "one_beat", kind)]
            half = report.scenarios[("noise", "half_beat", kind)]
            assert half.tp <= full.tp

    def test_report_serialization(self):
        records = self._records()
        preds = {r.track_key: [(t, 0.99) for t in r.cues] for r in records}
        report = evaluate({"m": preds}, records)
        doc = report.to_json()
        assert doc["version"] == 1
        assert "T1/cues_only" in doc["methods"]["m"]["scenarios"]
        text = report.to_text()
        assert "cues-only" in text and "16-bars" in text and "8-bars" in text
        assert "T1/2" in text
