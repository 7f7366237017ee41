"""Shared fixtures: synthetic tracks, oracle backend directories."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from cueengine.detect import IMAGENET_MEAN, IMAGENET_STD
from cueengine.specfeat import DB_FLOOR, HOP, N_MELS, MelSpec

_ACCEPTANCE_RESULTS: dict[str, tuple[str, str]] = {}


def record_acceptance(outcome: str, name: str, detail: str = "") -> None:
    _ACCEPTANCE_RESULTS[name] = (outcome, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for name, (outcome, detail) in _ACCEPTANCE_RESULTS.items():
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"  [{outcome}] {name}{suffix}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and "test_acceptance" in str(getattr(item, "fspath", "")):
        label = getattr(item.function, "_criterion", None)
        if label:
            record_acceptance("PASS" if report.passed else "FAIL", label)


def make_oracle_backend_dir(path: Path, num_queries: int = 100, threshold: float = 0.95) -> Path:
    """Write a synthetic-oracle backend directory and return it."""
    path.mkdir(parents=True, exist_ok=True)
    sidecar = {
        "version": 1,
        "kind": "oracle",
        "num_queries": num_queries,
        "cue_class_index": 0,
        "no_object_index": 1,
        "input": {"channels": 3, "height": 128, "width": 355},
        "normalize": {"mean": list(IMAGENET_MEAN), "std": list(IMAGENET_STD)},
        "oracle": {"intensity_threshold": threshold, "score": 0.99, "box_width": 21},
    }
    (path / "sidecar.json").write_text(json.dumps(sidecar, indent=2))
    return path


@pytest.fixture
def oracle_backend_dir(tmp_path):
    return make_oracle_backend_dir(tmp_path / "oracle-backend")


def planted_melspec(n_columns: int, planted: list[int]) -> MelSpec:
    """Floor-level spectrogram with saturated columns at the plants."""
    matrix = np.full((N_MELS, n_columns), DB_FLOOR, dtype=np.float32)
    for col in planted:
        matrix[:, col] = 0.0
    return MelSpec(matrix=matrix)


def click_track_samples(n_columns: int, planted: list[int], amp: float = 0.9) -> np.ndarray:
    """Silent PCM with single-sample clicks centered on the given columns."""
    samples = np.zeros((n_columns - 1) * HOP + 1, dtype=np.float64)
    for col in planted:
        samples[col * HOP] = amp
    return samples
