"""Detector backend contract, output decoding, and confidence accumulation.

A backend is anything that maps a batch of normalized 3x128x355 image
tensors to per-query class logits and normalized (cx, cy, w, h) boxes.
Two realizations ship here: an interchange-graph model (see
:mod:`cueengine.cuegraph`) and a synthetic oracle that fires on
near-saturated spectrogram columns, used for pipeline tests.

Decoding converts each kept query to an absolute spectrogram column and a
softmax confidence; accumulation merges all windows of a track into one
position-sorted confidence trace.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .specfeat import HOP, N_MELS, SAMPLE_RATE, TILE_WIDTH, InferenceWindow, MelSpec, inference_windows
from .util import atomic_write_text

# Channel statistics of the pre-trained backbone the reference detector was
# fine-tuned from; alternate backends declare their own in the sidecar.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

SIDECAR_VERSION = 1


class BackendError(Exception):
    """Raised when a backend cannot be loaded or violates its contract."""


@dataclass(frozen=True)
class BackendSpec:
    """Parsed sidecar: everything the engine must know about a backend."""

    kind: str  # "cuegraph" or "oracle"
    num_queries: int
    cue_class_index: int
    no_object_index: int
    channels: int = 3
    height: int = N_MELS
    width: int = TILE_WIDTH
    mean: tuple[float, ...] = IMAGENET_MEAN
    std: tuple[float, ...] = IMAGENET_STD
    extra: dict | None = None


def load_sidecar(path: str | Path) -> BackendSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BackendError(f"{path}: cannot read sidecar ({exc})") from exc
    if doc.get("version") != SIDECAR_VERSION:
        raise BackendError(f"{path}: unsupported sidecar version {doc.get('version')!r}")
    try:
        inp = doc["input"]
        norm = doc["normalize"]
        spec = BackendSpec(
            kind=doc.get("kind", "cuegraph"),
            num_queries=int(doc["num_queries"]),
            cue_class_index=int(doc["cue_class_index"]),
            no_object_index=int(doc["no_object_index"]),
            channels=int(inp["channels"]),
            height=int(inp["height"]),
            width=int(inp["width"]),
            mean=tuple(float(v) for v in norm["mean"]),
            std=tuple(float(v) for v in norm["std"]),
            extra=doc.get("oracle"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BackendError(f"{path}: malformed sidecar ({exc})") from exc
    if spec.num_queries < 1:
        raise BackendError(f"{path}: num_queries must be >= 1")
    if len(spec.mean) != spec.channels or len(spec.std) != spec.channels:
        raise BackendError(f"{path}: normalize constants must match channel count")
    return spec


@dataclass(frozen=True)
class BackendOutput:
    """Raw per-window model output: logits (B, Q, classes), boxes (B, Q, 4)."""

    logits: np.ndarray
    boxes: np.ndarray


class DetectorBackend(Protocol):
    spec: BackendSpec

    def infer(self, batch: np.ndarray) -> BackendOutput:
        """Run a batch of (B, channels, 128, 355) float32 tensors."""
        ...


class OracleBackend:
    """Synthetic detector: fires a box on every near-saturated column.

    Looks only at pixels (de-normalized channel 0), so it honors the same
    purity contract as a real model. Columns whose peak intensity reaches
    the configured threshold produce a cue detection centered there.
    """

    def __init__(self, spec: BackendSpec):
        self.spec = spec
        extra = spec.extra or {}
        self.intensity_threshold = float(extra.get("intensity_threshold", 0.95))
        self.fire_score = float(extra.get("score", 0.99))
        self.box_width = int(extra.get("box_width", 21))

    def infer(self, batch: np.ndarray) -> BackendOutput:
        spec = self.spec
        b, q = batch.shape[0], spec.num_queries
        n_classes = max(spec.cue_class_index, spec.no_object_index) + 1
        logit = math.log(self.fire_score / (1.0 - self.fire_score))

        logits = np.zeros((b, q, n_classes), dtype=np.float32)
        logits[:, :, spec.no_object_index] = logit
        boxes = np.zeros((b, q, 4), dtype=np.float32)
        boxes[:, :, 1] = 0.5
        boxes[:, :, 2] = self.box_width / spec.width
        boxes[:, :, 3] = 1.0

        for i in range(b):
            pix01 = batch[i, 0] * spec.std[0] + spec.mean[0]
            colmax = pix01.max(axis=0)
            cols = np.flatnonzero(colmax >= self.intensity_threshold)
            order = np.lexsort((cols, -colmax[cols]))[:q]
            for slot, j in enumerate(order):
                col = int(cols[j])
                logits[i, slot, spec.cue_class_index] = logit
                logits[i, slot, spec.no_object_index] = 0.0
                boxes[i, slot, 0] = col / spec.width
        return BackendOutput(logits=logits, boxes=boxes)


def load_backend(path: str | Path) -> DetectorBackend:
    """Load a backend from a directory holding ``sidecar.json``."""
    root = Path(path)
    sidecar = root / "sidecar.json" if root.is_dir() else root
    spec = load_sidecar(sidecar)
    if spec.kind == "oracle":
        return OracleBackend(spec)
    if spec.kind == "cuegraph":
        from .cuegraph import GraphBackend

        return GraphBackend.load(sidecar.parent, spec)
    raise BackendError(f"{sidecar}: unknown backend kind {spec.kind!r}")


def normalize_image(
    image: np.ndarray,
    mean: Sequence[float] = IMAGENET_MEAN,
    std: Sequence[float] = IMAGENET_STD,
) -> np.ndarray:
    """8-bit grayscale tile -> standardized (3, 128, 355) float32 tensor.

    Scales to [0, 1], replicates to three channels, then standardizes each
    channel with the backend's declared constants.
    """
    if image.shape != (N_MELS, TILE_WIDTH):
        raise ValueError(f"expected ({N_MELS}, {TILE_WIDTH}) image, got {image.shape}")
    scaled = image.astype(np.float32) / 255.0
    channels = np.stack([(scaled - m) / s for m, s in zip(mean, std)])
    return channels.astype(np.float32)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def decode_window(
    logits: np.ndarray,
    boxes: np.ndarray,
    window: InferenceWindow,
    pad: int,
    n_columns: int,
    spec: BackendSpec,
) -> list[tuple[int, float]]:
    """Map one window's queries to (absolute column, confidence) pairs.

    Softmax over the class logits gives the cue confidence; the box center
    is converted to a pixel column (midpoint taken in continuous
    coordinates, rounded once) and shifted by the window's left edge minus
    the zero-pad. Queries whose argmax class is no-object, or whose column
    falls outside the real track, are dropped.
    """
    probs = _softmax(np.asarray(logits, dtype=np.float64))
    classes = probs.argmax(axis=-1)
    keep = classes != spec.no_object_index

    center_px = np.rint(np.asarray(boxes, dtype=np.float64)[:, 0] * spec.width).astype(int)
    columns = window.left_edge + center_px - pad

    out = []
    for q in np.flatnonzero(keep):
        col = int(columns[q])
        if 0 <= col < n_columns:
            out.append((col, float(probs[q, spec.cue_class_index])))
    return out


@dataclass(frozen=True)
class ConfidenceTrace:
    """Position-sorted confidence over a track spectrogram.

    One entry per distinct column; overlapping windows reporting the same
    column keep the maximum score.
    """

    columns: np.ndarray  # int64, strictly ascending
    scores: np.ndarray  # float64 in [0, 1]
    n_columns: int

    def __len__(self) -> int:
        return len(self.columns)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["column", "time_s", "score"])
        for col, score in zip(self.columns, self.scores):
            writer.writerow([int(col), f"{col * HOP / SAMPLE_RATE:.6f}", f"{score:.6f}"])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, path: str | Path, n_columns: int | None = None) -> "ConfidenceTrace":
        rows = list(csv.DictReader(Path(path).open(encoding="utf-8")))
        columns = np.array([int(r["column"]) for r in rows], dtype=np.int64)
        scores = np.array([float(r["score"]) for r in rows], dtype=np.float64)
        order = np.argsort(columns, kind="stable")
        n = n_columns if n_columns is not None else (int(columns.max()) + 1 if len(rows) else 0)
        return cls(columns=columns[order], scores=scores[order], n_columns=n)


def accumulate(decoded: Iterable[tuple[int, float]], n_columns: int) -> ConfidenceTrace:
    """Merge decoded (column, score) pairs from all windows into a trace."""
    best: dict[int, float] = {}
    for col, score in decoded:
        prev = best.get(col)
        if prev is None or score > prev:
            best[col] = score
    columns = np.array(sorted(best), dtype=np.int64)
    scores = np.array([best[c] for c in columns], dtype=np.float64)
    return ConfidenceTrace(columns=columns, scores=scores, n_columns=n_columns)


def run_detection(
    spec_image: MelSpec,
    backend: DetectorBackend,
    pad: int,
    batch_size: int = 16,
) -> ConfidenceTrace:
    """Full inference pass: windows -> normalize -> backend -> trace."""
    windows = inference_windows(spec_image, pad)
    bspec = backend.spec
    decoded: list[tuple[int, float]] = []
    for start in range(0, len(windows), batch_size):
        chunk = windows[start : start + batch_size]
        batch = np.stack([normalize_image(w.image, bspec.mean, bspec.std) for w in chunk])
        out = backend.infer(batch)
        if out.logits.shape[:2] != (len(chunk), bspec.num_queries):
            raise BackendError(
                f"backend returned logits {out.logits.shape}, expected "
                f"({len(chunk)}, {bspec.num_queries}, ...)"
            )
        for w, logits, boxes in zip(chunk, out.logits, out.boxes):
            decoded.extend(decode_window(logits, boxes, w, pad, spec_image.n_columns, bspec))
    return accumulate(decoded, spec_image.n_columns)
