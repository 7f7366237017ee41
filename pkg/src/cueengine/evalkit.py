"""Evaluation protocol: tolerance matching, P/R/F1, AP, cosine similarity.

Predictions are matched one-to-one against ground truth inside a
per-track tolerance window of one beat or one half-beat. Corpus metrics
are micro-averaged (per-track macro means are emitted alongside).
Average precision ranks all predictions of the corpus by score, and the
distribution comparison quantizes positions to bars and takes the cosine
between corpus histograms.

Three ground-truth sets are supported: the manual annotations alone
(cues-only) and their phrase-aligned supersets (16-bars, 8-bars) built by
:mod:`cueengine.phrasing`.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .beatgrid import BeatGrid, bar_start_time, beat_duration, quantize_to_bar
from .dataset import TrackRecord
from .phrasing import PhraseSpec, phrase_boundaries

TOLERANCE_KINDS = ("one_beat", "half_beat")
TRUTH_KINDS = ("cues_only", "bars16", "bars8")

TOLERANCE_LABELS = {"one_beat": "T1", "half_beat": "T1/2"}
TRUTH_LABELS = {"cues_only": "cues-only", "bars16": "16-bars", "bars8": "8-bars"}


def tolerance_seconds(kind: str, grid: BeatGrid) -> float:
    """Allowed absolute error for a track: one beat or one half-beat."""
    beat = beat_duration(grid)
    if kind == "one_beat":
        return beat
    if kind == "half_beat":
        return beat / 2.0
    raise ValueError(f"unknown tolerance kind {kind!r}")


@dataclass(frozen=True)
class MatchResult:
    """Per-prediction TP/FP labels in descending-score order."""

    labels: tuple[tuple[float, float, bool], ...]  # (time, score, is_tp)
    n_truth: int

    @property
    def n_tp(self) -> int:
        return sum(1 for _, _, tp in self.labels if tp)

    @property
    def n_fp(self) -> int:
        return len(self.labels) - self.n_tp

    @property
    def n_fn(self) -> int:
        return self.n_truth - self.n_tp


def match(
    preds: Sequence[tuple[float, float]],
    truth: Sequence[float],
    tol: float,
) -> MatchResult:
    """Greedy one-to-one assignment of predictions to ground truth.

    Predictions are taken in descending score order (ties toward the
    earlier time); each claims the nearest unclaimed truth within
    |pred - truth| <= tol, preferring the earlier truth on exact distance
    ties. Claimed predictions are TPs, the rest FPs; unclaimed truths
    count as FNs.
    """
    ranked = sorted(preds, key=lambda p: (-p[1], p[0]))
    remaining = sorted(truth)
    labels = []
    for time, score in ranked:
        best = None
        for i, t in enumerate(remaining):
            d = abs(time - t)
            if d <= tol and (best is None or d < best[0]):
                best = (d, i)
        if best is not None:
            remaining.pop(best[1])
            labels.append((time, score, True))
        else:
            labels.append((time, score, False))
    return MatchResult(labels=tuple(labels), n_truth=len(truth))


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1 with the all-zero convention (0, 0, 0)."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def average_precision(ranked_tp: Sequence[bool], n_truth: int) -> float:
    """AP over a ranked TP/FP label sequence.

    Every true positive contributes the precision at its rank; the sum is
    normalized by the total number of ground-truth positions.
    """
    if n_truth == 0:
        return 0.0
    tp_seen = 0
    total = 0.0
    for rank, is_tp in enumerate(ranked_tp, start=1):
        if is_tp:
            tp_seen += 1
            total += tp_seen / rank
    return total / n_truth


def bar_histogram(
    times_by_track: Mapping[str, Sequence[float]],
    grids: Mapping[str, BeatGrid],
    n_bars_cap: int,
) -> np.ndarray:
    """Corpus histogram of positions quantized to bars 0..n_bars_cap."""
    counts: Counter[int] = Counter()
    for key, times in times_by_track.items():
        grid = grids[key]
        for t in times:
            bar = quantize_to_bar(t, grid)
            if bar <= n_bars_cap:
                counts[bar] += 1
    hist = np.zeros(n_bars_cap + 1, dtype=np.float64)
    for bar, count in counts.items():
        hist[bar] = count
    return hist


def cosine_hist(
    pred_times: Mapping[str, Sequence[float]],
    truth_times: Mapping[str, Sequence[float]],
    grids: Mapping[str, BeatGrid],
    n_bars_cap: int = 256,
) -> float:
    """Cosine similarity of bar-quantized position distributions.

    Scale-invariant in either histogram; 0.0 when either side is empty.
    Positions quantizing past the cap fall outside the histogram domain.
    """
    h_p = bar_histogram(pred_times, grids, n_bars_cap)
    h_t = bar_histogram(truth_times, grids, n_bars_cap)
    norm = np.linalg.norm(h_p) * np.linalg.norm(h_t)
    if norm == 0.0:
        return 0.0
    return float(np.dot(h_p, h_t) / norm)


# ---------------------------------------------------------------------------
# Ground-truth supersets

def phrase_truth_seconds(record: TrackRecord, phrase_len: int) -> list[float]:
    """Phrase-aligned ground-truth positions for one track, in seconds.

    Cues are quantized to bars, boundaries computed in the bar domain, and
    mapped back through the grid. Raises ValueError when the track has no
    cues (the boundary construction needs a non-empty cue set).
    """
    grid = record.grid
    bars = sorted({quantize_to_bar(c, grid) for c in record.cues})
    if not bars:
        raise ValueError(f"{record.track_key}: no cues, cannot build phrase truth")
    beats_end = (record.duration - grid.grid_offset) / beat_duration(grid)
    end_bar = (beats_end + grid.first_beat_number - 1) / grid.beats_per_bar
    # a cue that rounds to the final bar must still lie inside the span
    duration_bars = max(end_bar, bars[-1] + 1.0)
    spec = PhraseSpec(phrase_len=phrase_len, duration=duration_bars, cues=tuple(float(b) for b in bars))
    return [bar_start_time(int(round(b)), grid) for b in phrase_boundaries(spec)]


def build_truth_sets(records: Sequence[TrackRecord]) -> dict[str, dict[str, list[float]]]:
    """cues_only / bars16 / bars8 truth positions per track key.

    Tracks without cues appear only in cues_only (empty); the phrase
    supersets are undefined for them.
    """
    sets: dict[str, dict[str, list[float]]] = {k: {} for k in TRUTH_KINDS}
    for rec in records:
        key = rec.track_key
        sets["cues_only"][key] = sorted(rec.cues)
        if rec.cues:
            sets["bars16"][key] = phrase_truth_seconds(rec, 16)
            sets["bars8"][key] = phrase_truth_seconds(rec, 8)
    return sets


# ---------------------------------------------------------------------------
# Corpus evaluation

@dataclass(frozen=True)
class ScenarioResult:
    """Metrics for one (tolerance, truth-kind) scenario of one method."""

    precision: float
    recall: float
    f1: float
    ap: float
    tp: int
    fp: int
    fn: int
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_json(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "ap": self.ap,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }


def evaluate_scenario(
    preds_by_track: Mapping[str, Sequence[tuple[float, float]]],
    truth_by_track: Mapping[str, Sequence[float]],
    tol_by_track: Mapping[str, float],
    operating_threshold: float = 0.9,
) -> ScenarioResult:
    """Evaluate one method against one truth set at one tolerance.

    P/R/F1 use only predictions at or above the operating threshold; AP
    ranks every supplied prediction so the PR curve has support below the
    operating point.
    """
    tp = fp = fn = 0
    per_track = []
    ranked_all: list[tuple[float, str, float, bool]] = []  # (-score, key, time, tp)

    for key in sorted(truth_by_track):
        truth = truth_by_track[key]
        tol = tol_by_track[key]
        preds = list(preds_by_track.get(key, ()))

        operating = [p for p in preds if p[1] >= operating_threshold]
        res = match(operating, truth, tol)
        tp += res.n_tp
        fp += res.n_fp
        fn += res.n_fn
        per_track.append(prf(res.n_tp, res.n_fp, res.n_fn))

        res_all = match(preds, truth, tol)
        for time, score, is_tp in res_all.labels:
            ranked_all.append((-score, key, time, is_tp))

    precision, recall, f1 = prf(tp, fp, fn)
    n_truth_total = sum(len(t) for t in truth_by_track.values())
    ranked_all.sort()
    ap = average_precision([is_tp for *_, is_tp in ranked_all], n_truth_total)

    n = len(per_track)
    macro = tuple(sum(vals) / n for vals in zip(*per_track)) if n else (0.0, 0.0, 0.0)
    return ScenarioResult(
        precision=precision, recall=recall, f1=f1, ap=ap,
        tp=tp, fp=fp, fn=fn,
        macro_precision=macro[0], macro_recall=macro[1], macro_f1=macro[2],
    )


@dataclass
class EvalReport:
    """All scenario results per method, plus distribution similarity."""

    scenarios: dict[tuple[str, str, str], ScenarioResult] = field(default_factory=dict)
    cosine: dict[str, float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        methods: dict[str, dict] = {}
        for (method, tol_kind, truth_kind), result in sorted(self.scenarios.items()):
            entry = methods.setdefault(method, {"scenarios": {}, "cosine_similarity": None})
            entry["scenarios"][f"{TOLERANCE_LABELS[tol_kind]}/{truth_kind}"] = result.to_json()
        for method, value in self.cosine.items():
            methods.setdefault(method, {"scenarios": {}, "cosine_similarity": None})
            methods[method]["cosine_similarity"] = value
        return {"version": 1, "meta": self.meta, "methods": methods}

    def to_text(self, macro: bool = False) -> str:
        """Aligned table: rows per (tolerance, method), P/R/F1 per truth set."""
        methods = sorted({m for m, _, _ in self.scenarios})
        lines = []
        header_groups = "".join(f"{TRUTH_LABELS[k]:>24}" for k in TRUTH_KINDS)
        lines.append(f"{'tol':<5} {'method':<18}{header_groups}")
        sub = "".join(f"{'P':>8}{'R':>8}{'F1':>8}" for _ in TRUTH_KINDS)
        lines.append(f"{'':<5} {'':<18}{sub}")
        for tol_kind in TOLERANCE_KINDS:
            for method in methods:
                cells = []
                for truth_kind in TRUTH_KINDS:
                    res = self.scenarios.get((method, tol_kind, truth_kind))
                    if res is None:
                        cells.append(f"{'-':>8}{'-':>8}{'-':>8}")
                    elif macro:
                        cells.append(
                            f"{res.macro_precision:>8.2f}{res.macro_recall:>8.2f}{res.macro_f1:>8.2f}"
                        )
                    else:
                        cells.append(f"{res.precision:>8.2f}{res.recall:>8.2f}{res.f1:>8.2f}")
                label = TOLERANCE_LABELS[tol_kind]
                lines.append(f"{label:<5} {method:<18}{''.join(cells)}")
        if self.cosine:
            lines.append("")
            for method in sorted(self.cosine):
                lines.append(f"cosine similarity ({method}): {self.cosine[method]:.3f}")
        return "\n".join(lines) + "\n"


def evaluate(
    methods: Mapping[str, Mapping[str, Sequence[tuple[float, float]]]],
    records: Sequence[TrackRecord],
    operating_threshold: float = 0.9,
    n_bars_cap: int = 256,
) -> EvalReport:
    """Run the full scenario grid for every method.

    ``methods`` maps method name -> track key -> (time_s, score) pairs.
    """
    truth_sets = build_truth_sets(records)
    grids = {r.track_key: r.grid for r in records}

    report = EvalReport(meta={
        "n_tracks": len(records),
        "operating_threshold": operating_threshold,
        "ap_uses_all_supplied_predictions": True,
        "n_bars_cap": n_bars_cap,
    })
    for method, preds in methods.items():
        for tol_kind in TOLERANCE_KINDS:
            tol_by_track = {k: tolerance_seconds(tol_kind, g) for k, g in grids.items()}
            for truth_kind in TRUTH_KINDS:
                truth = truth_sets[truth_kind]
                result = evaluate_scenario(preds, truth, tol_by_track, operating_threshold)
                report.scenarios[(method, tol_kind, truth_kind)] = result
        operating_preds = {
            k: [t for t, s in preds.get(k, ()) if s >= operating_threshold]
            for k in grids
        }
        report.cosine[method] = cosine_hist(
            operating_preds, truth_sets["cues_only"], grids, n_bars_cap
        )
    return report
