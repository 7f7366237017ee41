"""Collection ingestion, duplicate merging, dataset splits, and corpus stats.

Collections arrive as JSON exports (one document per DJ library, see
``load_collection``). Tracks appearing in several collections are merged:
tempo and grid offset by arithmetic mean, cue points by quarter-beat
grouping, duration by maximum.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Iterable, Sequence

from .beatgrid import BeatGrid, beat_duration, quantize_to_bar
from .util import atomic_write_text

logger = logging.getLogger(__name__)

DATASET_VERSION = 1

# Tracks whose per-collection tempi disagree by more than this are flagged
# (merging still proceeds with the mean).
BPM_SPREAD_WARN = 1.0


def normalize_track_key(artist: str, title: str) -> str:
    """Canonical track identity: lowercase, whitespace-collapsed artist|title."""
    a = " ".join(artist.lower().split())
    t = " ".join(title.lower().split())
    return f"{a}|{t}"


@dataclass(frozen=True)
class CollectionEntry:
    """One track as exported by a single collection."""

    artist: str
    title: str
    bpm: float
    grid_offset: float
    cues: tuple[float, ...]
    duration: float
    beats_per_bar: int = 4
    first_beat_number: int = 1
    external_id: str | None = None
    collection: str = ""

    def __post_init__(self) -> None:
        if self.bpm <= 0:
            raise ValueError(f"{self.artist} - {self.title}: bpm must be > 0")
        if self.duration <= 0:
            raise ValueError(f"{self.artist} - {self.title}: duration must be > 0")
        for c in self.cues:
            if not 0 <= c <= self.duration:
                raise ValueError(
                    f"{self.artist} - {self.title}: cue {c:.3f}s outside [0, {self.duration:.3f}]"
                )

    @property
    def track_key(self) -> str:
        return normalize_track_key(self.artist, self.title)


@dataclass(frozen=True)
class TrackRecord:
    """Merged per-track metadata: identity, grid, cue set, duration."""

    artist: str
    title: str
    grid: BeatGrid
    cues: tuple[float, ...]
    duration: float
    source_count: int = 1
    external_id: str | None = None

    @property
    def track_key(self) -> str:
        return normalize_track_key(self.artist, self.title)


def merge_cues(cues: Sequence[float], grid: BeatGrid) -> list[float]:
    """Collapse cue points closer than a quarter beat into group centers.

    Grouping is transitive chaining on sorted order (single linkage):
    consecutive points with gap <= beat/4 belong to one group, and each
    group is replaced by the midpoint of its extent, (min + max) / 2.
    The output is strictly ascending, so re-merging is a no-op.
    """
    if not cues:
        return []
    threshold = beat_duration(grid) / 4.0
    ordered = sorted(cues)
    merged: list[float] = []
    group_start = group_end = ordered[0]
    for c in ordered[1:]:
        if c - group_end <= threshold:
            group_end = c
        else:
            merged.append((group_start + group_end) / 2.0)
            group_start = group_end = c
    merged.append((group_start + group_end) / 2.0)
    return merged


def merge_duplicates(entries: Sequence[CollectionEntry]) -> TrackRecord:
    """Merge all collection entries for one track into a single record.

    Tempo and grid offset become arithmetic means, cues are pooled and
    quarter-beat-grouped against the merged grid, duration is the maximum.
    """
    if not entries:
        raise ValueError("no entries")
    keys = {e.track_key for e in entries}
    if len(keys) > 1:
        raise ValueError(f"entries span multiple tracks: {sorted(keys)}")

    bpm = sum(e.bpm for e in entries) / len(entries)
    offset = sum(e.grid_offset for e in entries) / len(entries)

    spread = max(e.bpm for e in entries) - min(e.bpm for e in entries)
    if spread > BPM_SPREAD_WARN:
        logger.warning(
            "%s: bpm spread %.2f across %d collections exceeds %.1f",
            entries[0].track_key, spread, len(entries), BPM_SPREAD_WARN,
        )

    # Time signature fields must agree; pick the most common on conflict.
    bpb = Counter(e.beats_per_bar for e in entries).most_common(1)[0][0]
    fbn = Counter(e.first_beat_number for e in entries).most_common(1)[0][0]
    grid = BeatGrid(bpm=bpm, grid_offset=offset, beats_per_bar=bpb, first_beat_number=fbn)

    pooled = [c for e in entries for c in e.cues]
    cues = tuple(merge_cues(pooled, grid))
    external_id = next((e.external_id for e in entries if e.external_id), None)

    return TrackRecord(
        artist=entries[0].artist,
        title=entries[0].title,
        grid=grid,
        cues=cues,
        duration=max(e.duration for e in entries),
        source_count=len(entries),
        external_id=external_id,
    )


def merge_collections(entries: Iterable[CollectionEntry]) -> list[TrackRecord]:
    """Group entries by track key and merge each group; sorted by key."""
    by_key: dict[str, list[CollectionEntry]] = defaultdict(list)
    for e in entries:
        by_key[e.track_key].append(e)
    return [merge_duplicates(by_key[k]) for k in sorted(by_key)]


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint track-key sets plus the per-cue training index."""

    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]
    # (track_key, cue_time_s) pairs, one per training cue annotation
    training_index: tuple[tuple[str, float], ...]


def split_dataset(
    records: Sequence[TrackRecord],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Partition tracks into train/val/test by track key, never by cue.

    Deterministic under a fixed seed. Split sizes use largest-remainder
    apportionment so they depend only on len(records) and the ratios.
    """
    if any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if len(records) < len(ratios):
        raise ValueError(f"need at least {len(ratios)} records, got {len(records)}")

    keys = sorted({r.track_key for r in records})
    if len(keys) != len(records):
        raise ValueError("duplicate track keys; merge the dataset first")
    Random(seed).shuffle(keys)

    n = len(keys)
    floors = [int(n * r) for r in ratios]
    remainders = [n * r - f for r, f in zip(ratios, floors)]
    for _ in range(n - sum(floors)):
        i = max(range(len(ratios)), key=lambda j: (remainders[j], -j))
        floors[i] += 1
        remainders[i] = -1.0

    train = frozenset(keys[: floors[0]])
    val = frozenset(keys[floors[0] : floors[0] + floors[1]])
    test = frozenset(keys[floors[0] + floors[1] :])

    by_key = {r.track_key: r for r in records}
    index = tuple(
        (k, cue) for k in sorted(train) for cue in by_key[k].cues
    )
    return DatasetSplit(train=train, val=val, test=test, training_index=index)


@dataclass(frozen=True)
class CorpusStats:
    """Corpus-level summary used for the position/distance histograms."""

    n_tracks: int
    n_cues: int
    mean_cues_per_track: float
    cue_position_bars: dict[int, int]
    inter_cue_bars: dict[int, int]


def corpus_stats(records: Sequence[TrackRecord]) -> CorpusStats:
    """Track/cue counts plus bar-quantized position and spacing histograms.

    Inter-cue distances are differences of consecutive bar-quantized cue
    positions within each track.
    """
    positions: Counter[int] = Counter()
    distances: Counter[int] = Counter()
    n_cues = 0
    for rec in records:
        bars = [quantize_to_bar(c, rec.grid) for c in rec.cues]
        n_cues += len(bars)
        positions.update(bars)
        distances.update(b - a for a, b in zip(bars, bars[1:]))
    n_tracks = len(records)
    return CorpusStats(
        n_tracks=n_tracks,
        n_cues=n_cues,
        mean_cues_per_track=(n_cues / n_tracks) if n_tracks else 0.0,
        cue_position_bars=dict(sorted(positions.items())),
        inter_cue_bars=dict(sorted(distances.items())),
    )


# ---------------------------------------------------------------------------
# JSON interchange

def _entry_from_json(obj: dict, collection: str) -> CollectionEntry:
    return CollectionEntry(
        artist=obj["artist"],
        title=obj["title"],
        bpm=float(obj["bpm"]),
        grid_offset=float(obj["grid_offset_s"]),
        cues=tuple(sorted(float(c) for c in obj["cues_s"])),
        duration=float(obj["duration_s"]),
        beats_per_bar=int(obj.get("beats_per_bar", 4)),
        first_beat_number=int(obj.get("first_beat_number", 1)),
        external_id=obj.get("external_id"),
        collection=collection,
    )


def load_collection(path: str | Path) -> list[CollectionEntry]:
    """Read one collection interchange JSON document.

    Ingestion is restricted to constant-tempo 4/4 tracks; anything else is
    a validation error here rather than a silent pass-through.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    collection = doc.get("collection", Path(path).stem)
    entries = []
    for obj in doc["tracks"]:
        entry = _entry_from_json(obj, collection)
        if entry.beats_per_bar != 4:
            raise ValueError(
                f"{path}: {entry.artist} - {entry.title}: only 4/4 tracks are supported"
            )
        entries.append(entry)
    return entries


def record_to_json(rec: TrackRecord) -> dict:
    return {
        "artist": rec.artist,
        "title": rec.title,
        "bpm": rec.grid.bpm,
        "grid_offset_s": rec.grid.grid_offset,
        "beats_per_bar": rec.grid.beats_per_bar,
        "first_beat_number": rec.grid.first_beat_number,
        "duration_s": rec.duration,
        "cues_s": list(rec.cues),
        "external_id": rec.external_id,
        "source_count": rec.source_count,
    }


def save_dataset(records: Sequence[TrackRecord], path: str | Path) -> None:
    doc = {
        "version": DATASET_VERSION,
        "collection": "merged",
        "tracks": [record_to_json(r) for r in records],
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_dataset(path: str | Path) -> list[TrackRecord]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("version")
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version!r}")
    records = []
    for obj in doc["tracks"]:
        grid = BeatGrid(
            bpm=float(obj["bpm"]),
            grid_offset=float(obj["grid_offset_s"]),
            beats_per_bar=int(obj.get("beats_per_bar", 4)),
            first_beat_number=int(obj.get("first_beat_number", 1)),
        )
        records.append(
            TrackRecord(
                artist=obj["artist"],
                title=obj["title"],
                grid=grid,
                cues=tuple(float(c) for c in obj["cues_s"]),
                duration=float(obj["duration_s"]),
                source_count=int(obj.get("source_count", 1)),
                external_id=obj.get("external_id"),
            )
        )
    return records
