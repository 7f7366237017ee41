"""Phrase-boundary estimation from cue annotations.

EDM tracks are structured in phrases, usually 8 or 16 bars. Given a
track's cue set (which must mark the start of any irregular section),
its duration, and the phrase length, the boundary set is laid out in two
passes: backwards from the first cue in whole phrases down to zero, then
forwards from the first cue, snapping to any cue that a phrase step would
skip or land on. Every cue is itself a boundary.

All positions are in bar units; conversion to seconds goes through
:mod:`cueengine.beatgrid`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class PhraseSpec:
    """Inputs of the boundary computation, all in bars.

    Attributes:
        phrase_len: Phrase length in bars, >= 1.
        duration: Track duration in bars (boundaries stay strictly below it).
        cues: Ordered, non-empty cue positions; each in [0, duration).
    """

    phrase_len: int
    duration: float
    cues: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.phrase_len < 1:
            raise ValueError(f"phrase_len must be >= 1, got {self.phrase_len}")
        if not self.cues:
            raise ValueError("C must be non-empty")
        if any(b <= a for a, b in zip(self.cues, self.cues[1:])):
            raise ValueError(f"cues must be strictly ascending, got {self.cues}")
        if self.cues[0] < 0:
            raise ValueError(f"first cue must be >= 0, got {self.cues[0]}")
        if self.cues[-1] >= self.duration:
            raise ValueError(
                f"last cue {self.cues[-1]} must lie before duration {self.duration}"
            )


def phrase_boundaries(spec: PhraseSpec) -> list[float]:
    """Compute the ascending phrase-boundary set for ``spec``.

    Backward pass: c0 - l, c0 - 2l, ... while non-negative. Forward pass
    from c0: each step advances by one phrase length unless that step
    would skip or reach a cue, in which case the earliest such cue becomes
    the boundary and stepping resumes from it. The first boundary to reach
    the track duration is discarded, so the track end is not a boundary.
    """
    l = float(spec.phrase_len)
    t = float(spec.duration)
    cues = spec.cues
    c0 = cues[0]

    boundaries = [c0]
    b = c0 - l
    while b >= 0:
        boundaries.append(b)
        b -= l

    cur = c0
    while True:
        candidate = cur + l
        snapped = next((c for c in cues if cur < c <= candidate), None)
        nxt = snapped if snapped is not None else candidate
        if nxt >= t:
            break
        boundaries.append(nxt)
        cur = nxt

    return sorted(boundaries)
