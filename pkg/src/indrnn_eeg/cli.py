"""Command-line entry point: ``indrnn-eeg <command> ...``.

Exit codes: 0 success, 2 input/data errors, 3 numerical failures
(non-finite training, gradient check failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .annotations import SummaryError, discover_catalogs
from .edf import DEFAULT_CHANNELS, ChannelError, EdfError, load_channel_list
from .experiments import (CONFIG_KEYS, DatasetError, ExperimentConfig, ExperimentError, build_balanced_dataset,
                          build_experiment_model, channel_stats, cv_document, cv_table_csv, dumps,
                          labels_of, make_config, parse_config_text, random_split, run_cv, sweep_depth,
                          sweep_document, sweep_segment_lengths, sweep_table_csv, sweep_tidy_csv,
                          compute_metrics)
from .io_utils import atomic_write_text, sha256_file
from .model import CheckpointError, build_cnn_baseline, build_indrnn_model, build_lstm_baseline, grad_check, \
    ModelConfig, save_checkpoint
from .numerics import FLOAT64, SeededRng
from .segmentation import (CacheError, CachedSegmentSource, EdfSegmentSource, build_cache, read_cache,
                           segment_catalogs, seizure_stats, write_cache)
from .synth import write_synthetic_corpus
from .training import TrainingError, evaluate, history_csv, train

log = logging.getLogger("indrnn_eeg")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
INPUT_ERRORS = (EdfError, SummaryError, ChannelError, CacheError, CheckpointError, DatasetError,
                FileNotFoundError, KeyError, ValueError)


class InputError(Exception):
    pass


# --- manifests ---------------------------------------------------------------------


class Manifest:
    def __init__(self, command: str, path: Path):
        self.path = Path(path)
        self.doc = {"command": command, "config": {}, "seed": None,
                    "versions": {"indrnn_eeg": __version__, "numpy": np.__version__,
                                 "python": platform.python_version()},
                    "inputs": {}, "outputs": [], "timings": {}}
        self._t0 = time.perf_counter()

    def add_inputs(self, paths) -> None:
        for p in sorted({Path(p) for p in paths}):
            self.doc["inputs"][str(p)] = sha256_file(p)

    def output(self, path) -> Path:
        self.doc["outputs"].append(str(path))
        return Path(path)

    def write(self) -> None:
        self.doc["timings"]["wall_seconds"] = round(time.perf_counter() - self._t0, 3)
        atomic_write_text(self.path, json.dumps(self.doc, indent=2, sort_keys=True, default=str) + "\n")


def _corpus_inputs(data_dir, summary_dir=None) -> list[Path]:
    files = list(Path(data_dir).rglob("*.edf")) + list(Path(summary_dir or data_dir).rglob("*-summary.txt"))
    return files


# --- data sources ---------------------------------------------------------------------


def source_from_config(cfg: ExperimentConfig, segment_seconds: float | None = None):
    """Segment source for ``cfg``: a cache file, or EDF files under ``data_dir``."""
    if cfg.cache:
        cache = read_cache(cfg.cache)
        if [c.upper() for c in cache.channels] != [c.upper() for c in cfg.channels]:
            log.info("using the cache's channel list (%d channels)", len(cache.channels))
        # decimation counts from the raw rate; 1 (the default) takes the cache as stored
        total = cfg.decimation if cfg.decimation > 1 else cache.decimation
        if total % cache.decimation:
            raise InputError(f"decimation {cfg.decimation} is not a multiple of the cache's {cache.decimation}")
        return CachedSegmentSource(cache, total // cache.decimation)
    if not cfg.data_dir:
        raise InputError("configuration needs either 'cache' or 'data_dir'")
    catalogs, problems = discover_catalogs(cfg.data_dir, cfg.summary_dir)
    for p in problems:
        log.warning(p)
    index = segment_catalogs(catalogs, segment_seconds or cfg.segment_seconds, cfg.channels)
    for p in index.problems:
        log.warning(p)
    if not index.segments:
        raise InputError(f"no segments found under {cfg.data_dir}")
    return EdfSegmentSource(index, cfg.channels, cfg.decimation, cache_files=8)


def _load_config(args) -> ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        values = parse_config_text(Path(args.config).read_text(encoding="utf-8"))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise InputError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (p.strip() for p in item.split("=", 1))
        values[key] = value
    for key in ("seed", "repetitions", "epochs", "data_dir", "cache"):
        value = getattr(args, key, None)
        if value is not None:
            values[key] = value
    if getattr(args, "channels_file", None):
        values["channels"] = load_channel_list(args.channels_file)
    return make_config(values)


# --- commands ------------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    manifest = Manifest("synth", out / "manifest.json")
    truth = write_synthetic_corpus(out, args.seed, args.cases, args.duration, args.seizures_per_case,
                                   args.files_per_case, (args.seizure_min, args.seizure_max),
                                   seizure_gain=args.seizure_gain)
    manifest.doc["seed"] = args.seed
    manifest.doc["config"] = {k: v for k, v in vars(args).items() if k != "func"}
    manifest.doc["seizures"] = {k: [list(iv) for iv in v] for k, v in truth.items()}
    for path in sorted(out.rglob("*.edf")) + sorted(out.rglob("*-summary.txt")):
        manifest.output(path)
    manifest.write()
    n = sum(len(v) for v in truth.values())
    print(f"wrote {len(truth)} EDF files with {n} seizures under {out}")
    return EXIT_OK


def cmd_segment(args) -> int:
    channels = load_channel_list(args.channels_file) if args.channels_file else list(DEFAULT_CHANNELS)
    data_dir = Path(args.data_dir)
    if not data_dir.is_dir():
        raise InputError(f"data directory {data_dir} does not exist")
    catalogs, problems = discover_catalogs(data_dir, args.summary_dir)
    index = segment_catalogs(catalogs, args.seconds, channels)
    for p in problems + index.problems:
        print(f"warning: {p}", file=sys.stderr)
    stats = seizure_stats(index.segments)
    for line in stats.lines():
        print(line)
    if stats.seizure_segments == 0:
        print("error: no seizure segments found", file=sys.stderr)
        return EXIT_INPUT
    if args.out:
        out = Path(args.out)
        manifest = Manifest("segment", out.with_name(out.name + ".manifest.json"))
        manifest.doc["config"] = {"data_dir": str(data_dir), "summary_dir": args.summary_dir,
                                  "seconds": args.seconds, "channels": channels, "decimate": args.decimate}
        manifest.doc["stats"] = vars(stats)
        if not args.no_digest:
            manifest.add_inputs(_corpus_inputs(data_dir, args.summary_dir))
        source = EdfSegmentSource(index, channels, args.decimate, cache_files=4)
        write_cache(manifest.output(out), build_cache(source, index.sample_rate))
        manifest.write()
        print(f"wrote {len(index.segments)} segments to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    values = {"cache": args.cache, "model": args.model, "seed": args.seed, "decimation": args.decimate,
              "batch_size": args.batch}
    if args.depth is not None:
        values["depth"] = args.depth
    if args.hidden:
        values["hidden_sizes"] = args.hidden
    if args.lr is not None:
        values["learning_rate"] = args.lr
    if args.epochs is not None:
        values["epochs"] = args.epochs
    cfg = make_config(values)
    source = source_from_config(cfg)
    out = Path(args.out)
    manifest = Manifest("train", out.with_name(out.name + ".manifest.json"))
    manifest.doc["config"] = cfg.echo()
    manifest.doc["seed"] = cfg.seed
    if not args.no_digest:
        manifest.add_inputs([args.cache])

    rrng = SeededRng(cfg.seed, (0,))
    parts = random_split(build_balanced_dataset(source.segments, rrng.derive(0)), rrng.derive(1), cfg.split)
    xs = [source.load(p) for p in parts]
    ys = [labels_of(p) for p in parts]
    norm = None
    if cfg.normalize:
        mean, std = channel_stats(xs[0])
        xs = [(x - mean) / std for x in xs]
        norm = {"mean": mean.tolist(), "std": std.tolist()}
    model = build_experiment_model(cfg, rrng.derive(2), xs[0].shape[2])
    result = train(model, (xs[0], ys[0]), (xs[1], ys[1]), cfg.train_config(cfg.seed), rrng.derive(3))
    _, tp, fp, tn, fn = evaluate(model, xs[2], ys[2])
    report = compute_metrics(tp, fp, tn, fn)
    save_checkpoint(model, manifest.output(out), extra={"normalization": norm, "selected_epoch": result.selected_epoch})
    history_path = Path(args.history) if args.history else out.with_suffix(".history.csv")
    atomic_write_text(manifest.output(history_path), history_csv(result.history))
    manifest.doc["test_metrics"] = report.as_dict()
    manifest.doc["selected_epoch"] = result.selected_epoch
    manifest.write()
    print(f"selected epoch {result.selected_epoch}; test accuracy {report.accuracy:.4f}")
    return EXIT_OK


def _write_results(out: Path, manifest: Manifest, name: str, csv_text: str, doc: dict, extra=None) -> None:
    atomic_write_text(manifest.output(out / f"{name}.csv"), csv_text)
    atomic_write_text(manifest.output(out / f"{name}.json"), dumps(doc))
    for fname, text in (extra or {}).items():
        atomic_write_text(manifest.output(out / fname), text)


def _experiment_manifest(command: str, out: Path, cfg: ExperimentConfig, args) -> Manifest:
    manifest = Manifest(command, out / "manifest.json")
    manifest.doc["config"] = cfg.echo()
    manifest.doc["seed"] = cfg.seed
    if not getattr(args, "no_digest", False):
        if cfg.cache:
            manifest.add_inputs([cfg.cache])
        elif cfg.data_dir:
            manifest.add_inputs(_corpus_inputs(cfg.data_dir, cfg.summary_dir))
    return manifest


def cmd_cv(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    manifest = _experiment_manifest("cv", out, cfg, args)
    result = run_cv(cfg, source_from_config(cfg))
    _write_results(out, manifest, "cv_results", cv_table_csv(result), cv_document(result))
    manifest.write()
    print(cv_table_csv(result), end="")
    return EXIT_OK


def cmd_sweep_depth(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    manifest = _experiment_manifest("sweep-depth", out, cfg, args)
    rows = sweep_depth(cfg, source_from_config(cfg))
    _write_results(out, manifest, "sweep_depth", sweep_table_csv(rows), sweep_document(rows),
                   {"sweep_depth_tidy.csv": sweep_tidy_csv(rows)})
    manifest.write()
    print(sweep_table_csv(rows), end="")
    return EXIT_OK


def cmd_sweep_length(args) -> int:
    cfg = _load_config(args)
    if not cfg.data_dir:
        raise InputError("the segment-length sweep re-segments raw recordings; set data_dir")
    out = Path(args.out)
    manifest = _experiment_manifest("sweep-length", out, cfg, args)
    rows = sweep_segment_lengths(cfg, lambda c: source_from_config(c), depth=args.depth)
    _write_results(out, manifest, "sweep_length", sweep_table_csv(rows), sweep_document(rows),
                   {"sweep_length_tidy.csv": sweep_tidy_csv(rows)})
    manifest.write()
    print(sweep_table_csv(rows), end="")
    return EXIT_OK


GRADCHECK_SHAPES = {"steps": 8, "batch": 3, "channels": 4}


def gradcheck_model(kind: str, seed: int, depth: int = 2):
    """Small float64 model and input for gradient checks."""
    rng = SeededRng(seed)
    c = GRADCHECK_SHAPES["channels"]
    if kind == "indrnn":
        model = build_indrnn_model(ModelConfig(block_hidden_sizes=[5] * depth, input_channels=c, fc1_hidden=6),
                                   rng, FLOAT64)
    elif kind == "lstm":
        model = build_lstm_baseline(c, hidden=5, dense=4, rng=rng, dtype=FLOAT64)
    elif kind == "cnn":
        model = build_cnn_baseline(c, channels=(5, 6), fc=(6, 4), kernel=3, rng=rng, dtype=FLOAT64)
    else:
        raise InputError(f"unknown model {kind!r}")
    x = rng.normal(size=(GRADCHECK_SHAPES["steps"], GRADCHECK_SHAPES["batch"], c))
    labels = rng.integers(0, 2, GRADCHECK_SHAPES["batch"])
    return model, x, labels


def cmd_gradcheck(args) -> int:
    model, x, labels = gradcheck_model(args.model, args.seed, args.depth)
    corrupt = None
    if args.corrupt:
        corrupt = {model.named_parameters()[0][0]: 1.1}
    report = grad_check(model, x, labels, tolerance=args.tolerance, corrupt=corrupt)
    for line in report.lines():
        print(line)
    print("gradient check", "passed" if report.passed else "FAILED")
    return EXIT_OK if report.passed else EXIT_NUMERIC


# --- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="indrnn-eeg", description="IndRNN seizure/non-seizure EEG classification")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic CHB-MIT-style corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cases", type=int, default=6)
    s.add_argument("--duration", type=int, default=600, help="seconds per file")
    s.add_argument("--seizures-per-case", type=int, default=4)
    s.add_argument("--files-per-case", type=int, default=2)
    s.add_argument("--seizure-min", type=int, default=60)
    s.add_argument("--seizure-max", type=int, default=120)
    s.add_argument("--seizure-gain", type=float, default=8.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("segment", help="segment EDF recordings and report seizure statistics")
    s.add_argument("data_dir")
    s.add_argument("--summary-dir")
    s.add_argument("--seconds", type=float, default=23)
    s.add_argument("--channels-file")
    s.add_argument("--decimate", type=int, default=1)
    s.add_argument("--out", help="segment cache to write")
    s.add_argument("--no-digest", action="store_true", help="skip input SHA-256 digests")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("train", help="one training run on a segment cache")
    s.add_argument("--cache", required=True)
    s.add_argument("--model", choices=("indrnn", "lstm", "cnn"), default="indrnn")
    s.add_argument("--depth", type=int)
    s.add_argument("--hidden", type=int, nargs="+", help="explicit IndRNN block sizes")
    s.add_argument("--lr", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--decimate", type=int, default=1)
    s.add_argument("--history", help="history CSV path (default: next to the checkpoint)")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--no-digest", action="store_true")
    s.set_defaults(func=cmd_train)

    for name, func, extra in (("cv", cmd_cv, False), ("sweep-depth", cmd_sweep_depth, False),
                              ("sweep-length", cmd_sweep_length, True)):
        s = sub.add_parser(name, help=f"{name} experiment from a key=value config file")
        s.add_argument("config", nargs="?", help=f"config file; keys: {', '.join(CONFIG_KEYS)}")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
        s.add_argument("--seed", type=int)
        s.add_argument("--repetitions", type=int)
        s.add_argument("--epochs", type=int)
        s.add_argument("--data-dir", dest="data_dir")
        s.add_argument("--cache")
        s.add_argument("--channels-file")
        s.add_argument("--no-digest", action="store_true")
        if extra:
            s.add_argument("--depth", type=int, default=12)
        s.set_defaults(func=func)

    s = sub.add_parser("gradcheck", help="finite-difference gradient check on a small model")
    s.add_argument("--model", choices=("indrnn", "lstm", "cnn"), default="indrnn")
    s.add_argument("--depth", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.add_argument("--corrupt", action="store_true", help="scale one gradient by 1.1 (negative control)")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrainingError, ExperimentError) as exc:
        cause = getattr(exc, "cause", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(cause, TrainingError) else EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
