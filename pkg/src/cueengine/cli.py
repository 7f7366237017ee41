"""Command-line front end wiring the pipeline.

Subcommands: ingest, stats, tiles, analyze, phrase, eval, inspect.
Exit codes: 0 success, 2 unreadable/missing inputs, 3 backend load
failure, 4 configuration violation.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from random import Random

import click
import numpy as np

from . import audioio, dataset, detect, peaks, phrasing, specfeat
from .config import ConfigError, EngineConfig, apply_overrides, load_config
from .util import atomic_write_bytes, atomic_write_text

logger = logging.getLogger(__name__)

EXIT_INPUT = 2
EXIT_BACKEND = 3
EXIT_CONFIG = 4


def _fail(code: int, message: str) -> "NoReturn":  # noqa: F821
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.option(
    "--config", "config_path", envvar="CUE_ENGINE_CONFIG", default=None,
    type=click.Path(exists=True, dir_okay=False),
    help="TOML config file (env: CUE_ENGINE_CONFIG). Flags override it.",
)
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def main(ctx, config_path, verbose):
    """Cue point estimation engine."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(config_path) if config_path else EngineConfig()
        cfg.validate()
    except (ConfigError, OSError, ValueError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    ctx.obj = cfg


def _override_config(cfg: EngineConfig, **overrides) -> EngineConfig:
    try:
        cfg = apply_overrides(cfg, **overrides)
        cfg.validate()
        return cfg
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))


@main.command()
@click.argument("collections", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def ingest(collections, out):
    """Merge collection exports into a single dataset document."""
    entries = []
    for path in collections:
        try:
            entries.extend(dataset.load_collection(path))
        except (ValueError, KeyError) as exc:
            _fail(EXIT_INPUT, f"{path}: {exc}")
    records = dataset.merge_collections(entries)
    dataset.save_dataset(records, out)
    click.echo(f"merged {len(entries)} entries into {len(records)} tracks -> {out}")


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--plot", default=None, type=click.Path(dir_okay=False), help="Histogram PNG.")
def stats(dataset_path, out, plot):
    """Corpus statistics: counts plus bar-domain histograms."""
    records = dataset.load_dataset(dataset_path)
    st = dataset.corpus_stats(records)
    doc = {
        "n_tracks": st.n_tracks,
        "n_cues": st.n_cues,
        "mean_cues_per_track": st.mean_cues_per_track,
        "cue_position_bars": {str(k): v for k, v in st.cue_position_bars.items()},
        "inter_cue_bars": {str(k): v for k, v in st.inter_cue_bars.items()},
    }
    atomic_write_text(out, json.dumps(doc, indent=2) + "\n")
    click.echo(f"{st.n_tracks} tracks, {st.n_cues} cues -> {out}")
    if plot:
        _plot_stats(st, plot)


def _plot_stats(st, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(8, 5), tight_layout=True)
    for ax, hist, title in (
        (ax0, st.cue_position_bars, "cue positions (bars)"),
        (ax1, st.inter_cue_bars, "inter-cue distances (bars)"),
    ):
        if hist:
            ax.bar(list(hist.keys()), list(hist.values()), width=1.0)
        ax.set_title(title)
        ax.set_ylabel("count")
    fig.savefig(path, dpi=120)
    plt.close(fig)


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--audio-map", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON mapping track keys to WAV paths.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--split", type=click.Choice(["train", "val", "test", "all"]), default="train")
@click.option("--box-width", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--strict", is_flag=True, help="Fail instead of skipping tracks without audio.")
@click.pass_obj
def tiles(cfg, dataset_path, audio_map, out_dir, split, box_width, seed, workers, strict):
    """Export cue-centered training tiles plus the annotation JSON."""
    cfg = _override_config(cfg, box_width=box_width, seed=seed, workers=workers)
    records = dataset.load_dataset(dataset_path)
    audio_paths = json.loads(Path(audio_map).read_text(encoding="utf-8"))

    if split == "all":
        chosen = records
    else:
        parts = dataset.split_dataset(
            records, (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio), cfg.seed
        )
        keys = getattr(parts, split)
        chosen = [r for r in records if r.track_key in keys]

    missing = [r.track_key for r in chosen if r.track_key not in audio_paths]
    if missing:
        if strict:
            _fail(EXIT_INPUT, f"no audio for: {', '.join(missing)}")
        for key in missing:
            logger.warning("skipping %s: no audio mapped", key)
    chosen = [r for r in chosen if r.track_key in audio_paths]

    def tile_track(rec):
        samples = audioio.load_wav_mono(audio_paths[rec.track_key])
        spec = specfeat.mel_spectrogram(samples)
        rng = Random(f"{cfg.seed}:{rec.track_key}")
        tiles_out = []
        for i, cue in enumerate(rec.cues):
            p = min(specfeat.time_to_column(cue), spec.n_columns - 1)
            o = rng.randrange(specfeat.TILE_WIDTH)
            tiles_out.append((i, specfeat.training_tile(spec, p, o, cfg.box_width)))
        return tiles_out

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        per_track = list(pool.map(tile_track, chosen))

    slug = lambda k: "".join(c if c.isalnum() else "_" for c in k)
    indexed = []
    image_id = 0
    for rec, track_tiles in zip(chosen, per_track):
        for i, tile in track_tiles:
            indexed.append((image_id, f"{slug(rec.track_key)}_{i:03d}.png", tile))
            image_id += 1
    ann = specfeat.export_tiles(indexed, out_dir)
    click.echo(f"wrote {len(indexed)} tiles from {len(chosen)} tracks -> {ann}")


def _decode_to_wav(audio_path: str, template: str) -> Path:
    tmp = Path(tempfile.mkstemp(suffix=".wav")[1])
    cmd = [part.format(**{"in": audio_path, "out": str(tmp)}) for part in shlex.split(template)]
    result = subprocess.run(cmd, capture_output=True)
    if result.returncode != 0:
        tmp.unlink(missing_ok=True)
        _fail(EXIT_INPUT, f"decode command failed ({result.returncode}): {result.stderr.decode(errors='replace')[:500]}")
    return tmp


@main.command()
@click.argument("audio", type=click.Path(exists=True, dir_okay=False))
@click.option("--backend", "backend_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--trace-csv", default=None, type=click.Path(dir_okay=False))
@click.option("--track", default=None, help="Track key recorded in the output.")
@click.option("--median-bpm", type=float, default=None)
@click.option("--radius-bars", type=int, default=None)
@click.option("--radius-columns", type=int, default=None, help="Explicit radius, bypasses the bar conversion.")
@click.option("--pad", type=int, default=None)
@click.option("--pad-random", is_flag=True, default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--decode-cmd", default=None,
              help="External decoder template for non-WAV input, e.g. 'ffmpeg -y -i {in} {out}'.")
@click.pass_obj
def analyze(cfg, audio, backend_path, out, trace_csv, track, median_bpm, radius_bars,
            radius_columns, pad, pad_random, threshold, seed, decode_cmd):
    """Estimate cue points for one audio file."""
    cfg = _override_config(
        cfg, median_bpm=median_bpm, radius_bars=radius_bars, pad=pad,
        pad_random=pad_random, threshold=threshold, seed=seed,
    )
    if radius_columns is None and cfg.median_bpm is None:
        _fail(EXIT_CONFIG, "either --median-bpm (for the bar radius) or --radius-columns is required")

    wav_path = Path(audio)
    cleanup = None
    if wav_path.suffix.lower() != ".wav":
        if not decode_cmd:
            _fail(EXIT_INPUT, f"{audio}: not a WAV file and no --decode-cmd given")
        wav_path = cleanup = _decode_to_wav(audio, decode_cmd)
    try:
        try:
            samples = audioio.load_wav_mono(wav_path)
            spec = specfeat.mel_spectrogram(samples)
        except (ValueError, OSError) as exc:
            _fail(EXIT_INPUT, str(exc))

        try:
            backend = detect.load_backend(backend_path)
        except detect.BackendError as exc:
            _fail(EXIT_BACKEND, str(exc))

        used_pad = Random(cfg.seed).randint(specfeat.PAD_MIN, specfeat.PAD_MAX) if cfg.pad_random else cfg.pad
        trace = detect.run_detection(spec, backend, used_pad)

        radius = radius_columns if radius_columns is not None else peaks.radius_from_bars(
            cfg.radius_bars, cfg.median_bpm
        )
        candidates = peaks.select_peaks(trace, radius, cfg.threshold)

        peaks.write_candidates(candidates, out, track or Path(audio).stem, used_pad, cfg.radius_bars)
        if trace_csv:
            trace.write_csv(trace_csv)
        click.echo(f"{len(candidates)} candidates (pad={used_pad}, radius={radius} cols) -> {out}")
    finally:
        if cleanup is not None:
            cleanup.unlink(missing_ok=True)


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False, allow_dash=True))
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def phrase(in_path, out):
    """Phrase boundaries from a JSON spec (bar domain).

    Input: {"phrase_len": int, "duration_bars": number, "cues_bars": [...]}.
    Output: {"boundaries_bars": [...]}.
    """
    raw = sys.stdin.read() if in_path == "-" else Path(in_path).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
        spec = phrasing.PhraseSpec(
            phrase_len=int(doc["phrase_len"]),
            duration=float(doc["duration_bars"]),
            cues=tuple(float(c) for c in doc["cues_bars"]),
        )
        boundaries = phrasing.phrase_boundaries(spec)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        _fail(EXIT_INPUT, f"bad phrase spec: {exc}")
    result = json.dumps({"boundaries_bars": boundaries}, indent=2) + "\n"
    if out:
        atomic_write_text(out, result)
    else:
        click.echo(result, nl=False)


def _load_predictions(pred_dir: Path) -> dict[str, list[tuple[float, float]]]:
    preds: dict[str, list[tuple[float, float]]] = {}
    for path in sorted(pred_dir.glob("*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        entries = doc["predictions"] if isinstance(doc, dict) else doc
        key = doc.get("track", path.stem) if isinstance(doc, dict) else path.stem
        if any("score" not in e for e in entries):
            n = max(len(entries), 1)
            pairs = [(float(e["time_s"]), 1.0 - i / n) for i, e in enumerate(entries)]
        else:
            pairs = [(float(e["time_s"]), float(e["score"])) for e in entries]
        preds.setdefault(key, []).extend(pairs)
    return preds


@main.command("eval")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pred", "pred_specs", multiple=True, required=True,
              help="NAME=DIR with one prediction JSON per track; repeatable.")
@click.option("--out-prefix", required=True, help="Writes <prefix>.json and <prefix>.txt.")
@click.option("--threshold", type=float, default=None, help="Operating threshold for P/R/F1.")
@click.option("--macro", is_flag=True, help="Print per-track macro averages in the table.")
@click.option("--allow-missing", is_flag=True, help="Skip predictions for unknown tracks.")
@click.pass_obj
def eval_cmd(cfg, dataset_path, pred_specs, out_prefix, threshold, macro, allow_missing):
    """Evaluate prediction sets against a dataset (all scenario grid)."""
    from . import evalkit

    cfg = _override_config(cfg, threshold=threshold)
    records = dataset.load_dataset(dataset_path)
    known = {r.track_key for r in records}

    methods = {}
    unknown: list[str] = []
    for spec_str in pred_specs:
        name, _, dir_str = spec_str.partition("=")
        if not dir_str:
            name, dir_str = Path(spec_str).name, spec_str
        pred_dir = Path(dir_str)
        if not pred_dir.is_dir():
            _fail(EXIT_INPUT, f"{pred_dir}: not a directory")
        preds = _load_predictions(pred_dir)
        bad = sorted(set(preds) - known)
        if bad:
            unknown.extend(f"{name}: {k}" for k in bad)
            preds = {k: v for k, v in preds.items() if k in known}
        methods[name] = preds

    if unknown:
        for item in unknown:
            click.echo(f"unknown track key: {item}", err=True)
        if not allow_missing:
            _fail(EXIT_INPUT, f"{len(unknown)} predictions reference unknown tracks")

    report = evalkit.evaluate(methods, records, operating_threshold=cfg.threshold)
    atomic_write_text(f"{out_prefix}.json", json.dumps(report.to_json(), indent=2) + "\n")
    atomic_write_text(f"{out_prefix}.txt", report.to_text(macro=macro))
    click.echo(report.to_text(macro=macro), nl=False)


@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output PNG.")
@click.option("--audio", default=None, type=click.Path(exists=True, dir_okay=False),
              help="WAV for the spectrogram background.")
@click.option("--candidates", "candidates_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", "dataset_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--track", default=None, help="Track key for ground truth / boundaries.")
def inspect(trace_path, out, audio, candidates_path, dataset_path, track):
    """Render the confidence trace (and markers) to PNG + manifest JSON."""
    if not Path(trace_path).exists():
        _fail(EXIT_INPUT, f"{trace_path}: trace CSV not found")
    trace = detect.ConfidenceTrace.from_csv(trace_path)

    pixels = None
    if audio:
        try:
            spec = specfeat.mel_spectrogram(audioio.load_wav_mono(audio))
        except (ValueError, OSError) as exc:
            _fail(EXIT_INPUT, str(exc))
        pixels = spec.pixels()

    cand_times: list[float] = []
    if candidates_path:
        doc = json.loads(Path(candidates_path).read_text(encoding="utf-8"))
        cand_times = [float(c["time_s"]) for c in doc["candidates"]]

    truth_times: list[float] = []
    boundary_times: list[float] = []
    if dataset_path and track:
        from . import evalkit

        records = {r.track_key: r for r in dataset.load_dataset(dataset_path)}
        if track not in records:
            _fail(EXIT_INPUT, f"{track}: not in dataset")
        rec = records[track]
        truth_times = list(rec.cues)
        if rec.cues:
            boundary_times = evalkit.phrase_truth_seconds(rec, 16)

    manifest = {
        "track": track,
        "trace_entries": len(trace),
        "candidates": [
            {"time_s": t, "column": specfeat.time_to_column(t)} for t in cand_times
        ],
        "truth": [
            {"time_s": t, "column": specfeat.time_to_column(t)} for t in truth_times
        ],
        "boundaries": [
            {"time_s": t, "column": specfeat.time_to_column(t)} for t in boundary_times
        ],
    }
    _render_inspect(pixels, trace, manifest, out)
    atomic_write_text(f"{out}.manifest.json", json.dumps(manifest, indent=2) + "\n")
    atomic_write_text(f"{out}.csv", trace.to_csv())
    click.echo(f"rendered {len(trace)} trace entries -> {out}")


def _render_inspect(pixels, trace, manifest, out):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n_cols = pixels.shape[1] if pixels is not None else max(
        [trace.n_columns] + [m["column"] + 1 for m in manifest["candidates"]] or [1]
    )
    fig, ax = plt.subplots(figsize=(12, 3), tight_layout=True)
    if pixels is not None:
        ax.imshow(pixels, origin="lower", aspect="auto", cmap="magma",
                  extent=(0, pixels.shape[1], 0, specfeat.N_MELS))
    if len(trace):
        ax.plot(trace.columns, trace.scores * (specfeat.N_MELS - 1), color="white", linewidth=0.8)
    for m in manifest["truth"]:
        ax.axvline(m["column"], color="orange", linewidth=1.2)
    for m in manifest["boundaries"]:
        ax.axvline(m["column"], color="orange", linewidth=0.8, linestyle="--")
    for m in manifest["candidates"]:
        ax.axvline(m["column"], color="magenta", linewidth=1.2)
    ax.set_xlim(0, n_cols)
    ax.set_ylim(0, specfeat.N_MELS)
    ax.set_xlabel("spectrogram column")
    fig.canvas.draw()
    import io as _io

    buf = _io.BytesIO()
    fig.savefig(buf, format="png", dpi=120)
    plt.close(fig)
    atomic_write_bytes(out, buf.getvalue())


if __name__ == "__main__":
    main()
