"""Engine configuration: defaults, TOML round-trip, and validation.

The spectrogram geometry (rate, hop, window, bands, tile and stride
widths) is recorded here for reproducibility but is fixed by the engine;
validation rejects values the pipeline was not built for. The remaining
fields are true knobs.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import specfeat

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(Exception):
    pass


@dataclass
class EngineConfig:
    sample_rate: int = specfeat.SAMPLE_RATE
    hop: int = specfeat.HOP
    win: int = specfeat.WIN
    mel_bands: int = specfeat.N_MELS
    tile_width: int = specfeat.TILE_WIDTH
    stride: int = specfeat.STRIDE
    box_width: int = 21
    pad: int = 177
    pad_random: bool = False
    threshold: float = 0.9
    radius_bars: int = 16
    allow_custom_radius: bool = False
    median_bpm: float | None = None
    train_ratio: float = 0.8
    val_ratio: float = 0.1
    test_ratio: float = 0.1
    seed: int = 0
    workers: int = 4

    def validate(self) -> None:
        fixed = {
            "sample_rate": specfeat.SAMPLE_RATE,
            "hop": specfeat.HOP,
            "win": specfeat.WIN,
            "mel_bands": specfeat.N_MELS,
            "tile_width": specfeat.TILE_WIDTH,
            "stride": specfeat.STRIDE,
        }
        for name, expected in fixed.items():
            value = getattr(self, name)
            if value != expected:
                raise ConfigError(f"{name}={value} unsupported; engine is built for {expected}")
        if self.box_width < 1 or self.box_width % 2 == 0:
            raise ConfigError(f"box_width must be odd and positive, got {self.box_width}")
        if not specfeat.PAD_MIN <= self.pad <= specfeat.PAD_MAX:
            raise ConfigError(
                f"pad must be in [{specfeat.PAD_MIN}, {specfeat.PAD_MAX}], got {self.pad}"
            )
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.radius_bars not in (8, 16) and not self.allow_custom_radius:
            raise ConfigError(
                f"radius_bars={self.radius_bars} is outside {{8, 16}}; "
                "set allow_custom_radius to use it anyway"
            )
        if self.radius_bars < 0:
            raise ConfigError(f"radius_bars must be >= 0, got {self.radius_bars}")
        if self.median_bpm is not None and self.median_bpm <= 0:
            raise ConfigError(f"median_bpm must be > 0, got {self.median_bpm}")
        ratios = (self.train_ratio, self.val_ratio, self.test_ratio)
        if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be positive and sum to 1, got {ratios}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


def load_config(path: str | Path) -> EngineConfig:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    known = {f.name for f in fields(EngineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    cfg = EngineConfig(**doc)
    cfg.validate()
    return cfg


def dump_config(cfg: EngineConfig) -> str:
    """Serialize to TOML; load_config(dump_config(cfg)) is the identity."""
    lines = []
    for name, value in asdict(cfg).items():
        if value is None:
            continue  # optional fields are simply absent
        if isinstance(value, bool):
            lines.append(f"{name} = {'true' if value else 'false'}")
        elif isinstance(value, (int, float)):
            lines.append(f"{name} = {value!r}")
        else:
            lines.append(f'{name} = "{value}"')
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: EngineConfig, **overrides) -> EngineConfig:
    """Return a copy with every non-None override applied (flags win)."""
    values = asdict(cfg)
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in values:
            raise ConfigError(f"unknown config field {name!r}")
        values[name] = value
    return EngineConfig(**values)
