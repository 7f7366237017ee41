"""PCM WAV loading for the analysis pipeline.

Any rate and channel count is accepted: channels are downmixed to mono by
mean and the result is resampled to the engine rate with a polyphase
windowed-sinc filter. Compressed formats are out of scope here; the CLI
can shell out to an external decoder first.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

_INT_SCALE = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
}


def resample(samples: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    """Rational-factor windowed-sinc resampling to ``target_rate``."""
    if rate == target_rate:
        return samples
    g = math.gcd(int(rate), int(target_rate))
    return resample_poly(samples, target_rate // g, rate // g)


def load_wav_mono(path: str | Path, target_rate: int = 22050) -> np.ndarray:
    """Read a PCM WAV as mono float64 in [-1, 1] at ``target_rate``.

    Raises ValueError for empty or unreadable audio.
    """
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # wavfile raises assorted types for bad files
        raise ValueError(f"{path}: not a readable WAV file ({exc})") from exc

    if data.size == 0:
        raise ValueError(f"{path}: empty audio")

    scale = _INT_SCALE.get(data.dtype)
    if scale is not None:
        samples = data.astype(np.float64) / scale
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return resample(samples, rate, target_rate)


def write_wav(path: str | Path, samples: np.ndarray, rate: int = 22050) -> None:
    """Write mono float samples in [-1, 1] as 16-bit PCM WAV."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(str(path), rate, (clipped * 32767.0).astype(np.int16))
