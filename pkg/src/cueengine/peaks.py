"""Greedy radius-constrained peak selection over a confidence trace."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beatgrid import BeatGrid, bars_to_seconds
from .detect import ConfidenceTrace
from .specfeat import HOP, SAMPLE_RATE
from .util import atomic_write_text

DEFAULT_THRESHOLD = 0.9


@dataclass(frozen=True)
class CueCandidate:
    """One selected cue position; rank 1 is the highest confidence."""

    column: int
    time: float
    score: float
    rank: int


def select_peaks(
    trace: ConfidenceTrace,
    radius: int,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[CueCandidate]:
    """Pick trace entries greedily by descending confidence.

    An entry is selected iff its score reaches the threshold and it lies
    strictly more than ``radius`` columns from every already-selected
    candidate (ties in score break toward the smaller column). The result
    is sorted by column; ``rank`` records the selection order.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")

    order = np.lexsort((trace.columns, -trace.scores))
    selected: list[tuple[int, float, int]] = []  # (column, score, rank)
    for idx in order:
        score = float(trace.scores[idx])
        if score < threshold:
            break  # descending order: nothing below can qualify
        col = int(trace.columns[idx])
        if all(abs(col - c) > radius for c, _, _ in selected):
            selected.append((col, score, len(selected) + 1))

    selected.sort(key=lambda item: item[0])
    return [
        CueCandidate(column=col, time=col * HOP / SAMPLE_RATE, score=score, rank=rank)
        for col, score, rank in selected
    ]


def radius_from_bars(bars: int, median_bpm: float) -> int:
    """Suppression radius in spectrogram columns for a phrase of ``bars``.

    Metronome-agnostic: the bar length is taken at the dataset median
    tempo (4/4), converted to columns at the engine hop.
    """
    if median_bpm <= 0:
        raise ValueError(f"median_bpm must be > 0, got {median_bpm}")
    seconds = bars_to_seconds(bars, BeatGrid(bpm=median_bpm))
    return int(round(seconds * SAMPLE_RATE / HOP))


def candidates_to_json(
    candidates: list[CueCandidate],
    track: str,
    pad: int,
    radius_bars: int,
) -> dict:
    return {
        "track": track,
        "pad": pad,
        "radius_bars": radius_bars,
        "candidates": [
            {"time_s": round(c.time, 6), "score": round(c.score, 6), "rank": c.rank}
            for c in candidates
        ],
    }


def write_candidates(
    candidates: list[CueCandidate],
    path: str | Path,
    track: str,
    pad: int,
    radius_bars: int,
) -> None:
    doc = candidates_to_json(candidates, track, pad, radius_bars)
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
