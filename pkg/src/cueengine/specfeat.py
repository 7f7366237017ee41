"""Mel-spectrogram features, training tiles, and inference windows.

The whole-track spectrogram uses 128 Mel bands at 22,050 Hz with a
2,048-sample Hann window and a 512-sample hop. Power is expressed in dB
relative to the track maximum with an -80 dB floor, then quantized to
8-bit pixels; that pixel form is the canonical image both for exported
training tiles and for inference windows, so the two paths see identical
data.

Training tiles are 128x355 crops around a cue column with a full-height
bounding box; inference windows slide across the zero-padded track with a
75% overlap (stride 89 columns).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import audioio
from .util import atomic_write_bytes, atomic_write_text

logger = logging.getLogger(__name__)

SAMPLE_RATE = 22050
HOP = 512
WIN = 2048
N_MELS = 128
TILE_WIDTH = 355
STRIDE = 89  # 355 * 0.25 rounds up; keeps the 0.75 overlap integral
PAD_MIN = 89
PAD_MAX = 266
DB_FLOOR = -80.0


def column_to_time(column: float) -> float:
    """Seconds covered up to spectrogram column ``column``."""
    return column * HOP / SAMPLE_RATE


def time_to_column(time_s: float) -> int:
    """Nearest spectrogram column for a position in seconds."""
    return int(round(time_s * SAMPLE_RATE / HOP))


def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = WIN,
    rate: int = SAMPLE_RATE,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> np.ndarray:
    """Triangular Mel filterbank, shape (n_mels, 1 + n_fft // 2).

    Slaney-style Mel scale (linear below 1 kHz, logarithmic above) with
    area normalization. Adjacent triangles overlap by half, so any FFT
    bin has non-zero weight in at most two filters.
    """
    if fmax is None:
        fmax = rate / 2.0

    def hz_to_mel(f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        f_sp = 200.0 / 3.0
        min_log_hz = 1000.0
        logstep = np.log(6.4) / 27.0
        mel = f / f_sp
        log_region = f >= min_log_hz
        mel = np.where(log_region, min_log_hz / f_sp + np.log(np.maximum(f, min_log_hz) / min_log_hz) / logstep, mel)
        return mel

    def mel_to_hz(m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=np.float64)
        f_sp = 200.0 / 3.0
        min_log_hz = 1000.0
        min_log_mel = min_log_hz / f_sp
        logstep = np.log(6.4) / 27.0
        hz = m * f_sp
        log_region = m >= min_log_mel
        hz = np.where(log_region, min_log_hz * np.exp(logstep * (m - min_log_mel)), hz)
        return hz

    mel_points = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fft_freqs = np.linspace(0.0, rate / 2.0, 1 + n_fft // 2)

    weights = np.zeros((n_mels, len(fft_freqs)))
    for i in range(n_mels):
        lower, center, upper = mel_points[i : i + 3]
        up = (fft_freqs - lower) / max(center - lower, 1e-12)
        down = (upper - fft_freqs) / max(upper - center, 1e-12)
        weights[i] = np.maximum(0.0, np.minimum(up, down))
        # area-normalize so each filter integrates to ~unit energy
        weights[i] *= 2.0 / (upper - lower)
    return weights


@dataclass(frozen=True)
class MelSpec:
    """Whole-track Mel spectrogram in dB, plus the column <-> time mapping."""

    matrix: np.ndarray  # (128, N) float32, dB in [-80, 0]
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP
    window: int = WIN

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    def pixels(self) -> np.ndarray:
        """8-bit image form: round(255 * (dB + 80) / 80), shape (128, N)."""
        scaled = np.rint(255.0 * (self.matrix + 80.0) / 80.0)
        return np.clip(scaled, 0, 255).astype(np.uint8)


def mel_spectrogram(pcm: np.ndarray, rate: int = SAMPLE_RATE) -> MelSpec:
    """Compute the dB-scaled Mel spectrogram of a mono signal.

    Frames are centered (reflective edge padding), so a track of n samples
    yields N = 1 + n // 512 columns and column k is centered on sample
    k * 512. Power is referenced to the matrix maximum and floored at
    -80 dB; an all-zero signal sits entirely on the floor.
    """
    if rate <= 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    x = np.asarray(pcm, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected mono samples, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("empty audio")
    if rate != SAMPLE_RATE:
        x = audioio.resample(x, rate, SAMPLE_RATE)

    half = WIN // 2
    mode = "reflect" if x.size > 1 else "edge"
    padded = np.pad(x, half, mode=mode)

    frames = np.lib.stride_tricks.sliding_window_view(padded, WIN)[::HOP]
    window = np.hanning(WIN + 1)[:-1]  # periodic Hann
    spectrum = np.fft.rfft(frames * window, axis=1)
    power = np.abs(spectrum) ** 2  # (N, 1025)

    fb = mel_filterbank()
    mel_power = power @ fb.T  # (N, 128)

    ref = float(mel_power.max())
    if ref <= 0.0:
        db = np.full_like(mel_power, DB_FLOOR)
    else:
        db = 10.0 * np.log10(np.maximum(mel_power, ref * 1e-8) / ref)
    return MelSpec(matrix=db.T.astype(np.float32))


@dataclass(frozen=True)
class TrainingTile:
    """One 128x355 training crop with its full-height cue bounding box.

    The crop covers spectrogram columns [cue_column - offset,
    cue_column - offset + 355); regions outside the track are zero. The
    box is centered on tile column ``offset`` and cropped to the tile.
    """

    image: np.ndarray  # (128, 355) uint8
    cue_column: int
    offset: int
    box_x0: int  # inclusive
    box_x1: int  # exclusive

    @property
    def box_center(self) -> int:
        return self.offset

    @property
    def box_width(self) -> int:
        return self.box_x1 - self.box_x0


def training_tile(spec: MelSpec, p: int, o: int, w: int) -> TrainingTile:
    """Cut the tile for cue column ``p`` with offset ``o`` and box width ``w``."""
    n = spec.n_columns
    if not 0 <= o < TILE_WIDTH:
        raise ValueError(f"offset must be in [0, {TILE_WIDTH}), got {o}")
    if not 0 <= p < n:
        raise ValueError(f"cue column {p} outside spectrogram with {n} columns")
    if w < 1 or w % 2 == 0:
        raise ValueError(f"box width must be odd and positive, got {w}")

    pixels = spec.pixels()
    left = p - o
    image = np.zeros((N_MELS, TILE_WIDTH), dtype=np.uint8)
    src0 = max(left, 0)
    src1 = min(left + TILE_WIDTH, n)
    if src1 > src0:
        image[:, src0 - left : src1 - left] = pixels[:, src0:src1]

    half = (w - 1) // 2
    x0 = max(o - half, 0)
    x1 = min(o + half + 1, TILE_WIDTH)
    return TrainingTile(image=image, cue_column=p, offset=o, box_x0=x0, box_x1=x1)


@dataclass(frozen=True)
class InferenceWindow:
    """One sliding-window crop; ``left_edge`` indexes the padded track."""

    image: np.ndarray  # (128, 355) uint8
    left_edge: int


def inference_windows(spec: MelSpec, pad: int) -> list[InferenceWindow]:
    """Slide 355-column windows over the left-zero-padded track.

    ``pad`` zero columns are prepended (the arbitrary offset that spreads
    cue positions across window coordinates), then windows start at every
    multiple of the 89-column stride whose left edge still lies inside
    the padded track. The last window is right-zero-padded, so every real
    column appears in at least one window (and at most four).
    """
    if not PAD_MIN <= pad <= PAD_MAX:
        raise ValueError(f"pad must be in [{PAD_MIN}, {PAD_MAX}], got {pad}")
    n = spec.n_columns
    if n < 1:
        raise ValueError("spectrogram has no columns")

    pixels = spec.pixels()
    total = pad + n
    windows = []
    for edge in range(0, ((total - 1) // STRIDE) * STRIDE + 1, STRIDE):
        image = np.zeros((N_MELS, TILE_WIDTH), dtype=np.uint8)
        src0 = max(edge, pad)
        src1 = min(edge + TILE_WIDTH, total)
        if src1 > src0:
            image[:, src0 - edge : src1 - edge] = pixels[:, src0 - pad : src1 - pad]
        windows.append(InferenceWindow(image=image, left_edge=edge))
    return windows


# ---------------------------------------------------------------------------
# Tile export (training data for the detector)

def write_tile_png(image: np.ndarray, path: str | Path) -> None:
    """Write one 128x355 tile as 8-bit grayscale PNG."""
    import io

    buf = io.BytesIO()
    Image.fromarray(image, mode="L").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def build_annotations(tiles: Sequence[tuple[int, str, TrainingTile]]) -> dict:
    """Detection-annotation JSON for exported tiles.

    ``tiles`` holds (image_id, file name, tile). Boxes are in top-left
    corner pixel format [x, y, width, height].
    """
    return {
        "images": [
            {"id": image_id, "file": file, "width": TILE_WIDTH, "height": N_MELS}
            for image_id, file, _ in tiles
        ],
        "annotations": [
            {
                "image_id": image_id,
                "bbox": [tile.box_x0, 0, tile.box_width, N_MELS],
                "category_id": 1,
            }
            for image_id, _, tile in tiles
        ],
        "categories": [{"id": 1, "name": "cue"}],
    }


def export_tiles(
    tiles: Sequence[tuple[int, str, TrainingTile]],
    out_dir: str | Path,
    annotations_name: str = "annotations.json",
) -> Path:
    """Write tile PNGs plus the annotation JSON; returns the JSON path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for _, file, tile in tiles:
        write_tile_png(tile.image, out_dir / file)
    ann_path = out_dir / annotations_name
    atomic_write_text(ann_path, json.dumps(build_annotations(tiles), indent=2) + "\n")
    return ann_path
