"""Beat-grid arithmetic: mapping seconds to beats, downbeats, and bars.

A beat grid is the stored metronome of a track: tempo, the position of
the first grid beat, and where that beat falls within its bar. All
functions here are pure arithmetic over those stored values; nothing is
estimated from audio.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BeatGrid:
    """Stored metronome for one track.

    Attributes:
        bpm: Tempo in beats per minute, > 0.
        grid_offset: Position of the first grid beat, in seconds. May be
            negative (some collections anchor the grid before sample 0).
        beats_per_bar: Time signature numerator; 4 for all supported data.
        first_beat_number: Beat number of the grid's first beat, 1-based
            within its bar. 1 means the grid starts on a downbeat.
    """

    bpm: float
    grid_offset: float = 0.0
    beats_per_bar: int = 4
    first_beat_number: int = 1

    def __post_init__(self) -> None:
        if self.bpm <= 0:
            raise ValueError(f"bpm must be > 0, got {self.bpm}")
        if self.beats_per_bar < 1:
            raise ValueError(f"beats_per_bar must be >= 1, got {self.beats_per_bar}")
        if not 1 <= self.first_beat_number <= self.beats_per_bar:
            raise ValueError(
                "first_beat_number must be in [1, beats_per_bar], got "
                f"{self.first_beat_number} with beats_per_bar={self.beats_per_bar}"
            )


def beat_duration(grid: BeatGrid) -> float:
    """Length of one beat in seconds (60 / bpm)."""
    return 60.0 / grid.bpm


def beat_time(beat_index: int, grid: BeatGrid) -> float:
    """Position of grid beat ``beat_index`` (0-based) in seconds."""
    return grid.grid_offset + beat_index * beat_duration(grid)


def is_downbeat(beat_index: int, grid: BeatGrid) -> bool:
    """Whether grid beat ``beat_index`` (0-based) is the first beat of a bar."""
    return (beat_index + grid.first_beat_number - 1) % grid.beats_per_bar == 0


def quantize_to_bar(time: float, grid: BeatGrid) -> int:
    """Quantize a position in seconds to the nearest bar index.

    Rounding is half-to-even. Positions before the grid origin clamp to
    bar 0; preludes ahead of the first grid beat exist in practice and
    bar indices stay non-negative.
    """
    beats = (time - grid.grid_offset) / beat_duration(grid)
    bar = round((beats + grid.first_beat_number - 1) / grid.beats_per_bar)
    return max(int(bar), 0)


def bars_to_seconds(n_bars: float, grid: BeatGrid) -> float:
    """Duration of ``n_bars`` bars in seconds. Linear in ``n_bars``."""
    if n_bars < 0:
        raise ValueError(f"n_bars must be >= 0, got {n_bars}")
    return n_bars * grid.beats_per_bar * beat_duration(grid)


def bar_start_time(bar: int, grid: BeatGrid) -> float:
    """Position of a bar's downbeat in seconds.

    Inverse of :func:`quantize_to_bar` on exact bar starts. The result
    can be negative for bar 0 when the grid starts mid-bar.
    """
    beats = bar * grid.beats_per_bar - (grid.first_beat_number - 1)
    return grid.grid_offset + beats * beat_duration(grid)
