#!/usr/bin/env python3
"""Regenerate the toy fixture set from the analysis engine's CLI.

Creates a synthetic click track, a one-track collection, the merged
dataset, and ten cue-centered tiles + annotations exported by
`cueengine tiles`. Everything lands in fixtures/toy/.

Usage: python3 make_toy.py
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from cueengine import audioio
from cueengine.specfeat import HOP, SAMPLE_RATE

TOY = Path(__file__).parent / "toy"
CUE_COLUMNS = [700 + 1500 * k for k in range(10)]
N_COLUMNS = 16000
SEED = 11


def main() -> None:
    TOY.mkdir(parents=True, exist_ok=True)

    samples = np.zeros((N_COLUMNS - 1) * HOP + 1)
    for col in CUE_COLUMNS:
        samples[col * HOP] = 0.9
    audioio.write_wav(TOY / "track.wav", samples)

    duration = (N_COLUMNS - 1) * HOP / SAMPLE_RATE
    collection = {
        "collection": "toy",
        "tracks": [{
            "artist": "Toy", "title": "Clicks", "bpm": 120.0,
            "grid_offset_s": 0.0, "beats_per_bar": 4, "first_beat_number": 1,
            "duration_s": duration,
            "cues_s": [c * HOP / SAMPLE_RATE for c in CUE_COLUMNS],
            "external_id": None,
        }],
    }
    (TOY / "collection.json").write_text(json.dumps(collection, indent=2))
    (TOY / "cue_columns.json").write_text(json.dumps(CUE_COLUMNS))

    run = lambda *args: subprocess.run(["cueengine", *args], check=True)
    run("ingest", str(TOY / "collection.json"), "--out", str(TOY / "dataset.json"))
    (TOY / "audio_map.json").write_text(json.dumps({"toy|clicks": str(TOY / "track.wav")}))
    run(
        "tiles", "--dataset", str(TOY / "dataset.json"),
        "--audio-map", str(TOY / "audio_map.json"),
        "--out", str(TOY / "tiles"), "--split", "all", "--seed", str(SEED),
    )
    # paths in audio_map are machine-specific scaffolding; drop after use
    (TOY / "audio_map.json").unlink()
    print(f"toy fixtures written to {TOY}")


if __name__ == "__main__":
    sys.exit(main())
