"""Cue point estimation engine for electronic dance music.

Pipeline: beat-grid math (:mod:`beatgrid`), collection merging
(:mod:`dataset`), phrase boundaries (:mod:`phrasing`), Mel-spectrogram
tiles and windows (:mod:`specfeat`), detector decoding (:mod:`detect`),
greedy peak selection (:mod:`peaks`), and the evaluation protocol
(:mod:`evalkit`). The neural detector sits behind a pluggable backend
contract; see :mod:`cuegraph` for the interchange format.
"""

__version__ = "0.1.0"

from .beatgrid import BeatGrid, bars_to_seconds, beat_duration, quantize_to_bar
from .dataset import CollectionEntry, TrackRecord, merge_cues, merge_duplicates
from .detect import ConfidenceTrace, load_backend, run_detection
from .peaks import CueCandidate, radius_from_bars, select_peaks
from .phrasing import PhraseSpec, phrase_boundaries
from .specfeat import MelSpec, inference_windows, mel_spectrogram, training_tile

__all__ = [
    "BeatGrid",
    "CollectionEntry",
    "ConfidenceTrace",
    "CueCandidate",
    "MelSpec",
    "PhraseSpec",
    "TrackRecord",
    "bars_to_seconds",
    "beat_duration",
    "inference_windows",
    "load_backend",
    "mel_spectrogram",
    "merge_cues",
    "merge_duplicates",
    "phrase_boundaries",
    "quantize_to_bar",
    "radius_from_bars",
    "run_detection",
    "select_peaks",
    "training_tile",
]
