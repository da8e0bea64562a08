"""Balanced datasets, repeated random sub-sampling CV, metrics and sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .edf import DEFAULT_CHANNELS
from .model import (CNN_CHANNELS, CNN_FC, ModelConfig, build_cnn_baseline, build_indrnn_model,
                    build_lstm_baseline, hidden_sizes_for_depth)
from .numerics import SeededRng
from .segmentation import NON_SEIZURE, SEIZURE, Segment
from .training import TrainConfig, TrainingError, evaluate, train

log = logging.getLogger(__name__)

METRICS = ("sensitivity", "specificity", "f1", "precision", "accuracy")
METRIC_TITLES = {"sensitivity": "Sensitivity", "specificity": "Specificity", "f1": "F1 Score",
                 "precision": "Precision", "accuracy": "Accuracy"}


# --- metrics ---------------------------------------------------------------------


@dataclass
class MetricsReport:
    """Confusion counts and derived metrics; ``None`` marks an undefined ratio."""

    tp: int
    fp: int
    tn: int
    fn: int
    sensitivity: float | None
    specificity: float | None
    precision: float | None
    f1: float | None
    accuracy: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _ratio(num, den):
    return num / den if den else None


def compute_metrics(tp: int, fp: int, tn: int, fn: int) -> MetricsReport:
    counts = (tp, fp, tn, fn)
    if any(c < 0 for c in counts):
        raise ValueError(f"confusion counts must be non-negative, got {counts}")
    total = sum(counts)
    if total == 0:
        raise ValueError("all confusion counts are zero")
    sens = _ratio(tp, tp + fn)
    spec = _ratio(tn, tn + fp)
    prec = _ratio(tp, tp + fp)
    if sens is None or prec is None or sens + prec == 0:
        f1 = None
    else:
        f1 = 2 * prec * sens / (prec + sens)
    return MetricsReport(tp, fp, tn, fn, sens, spec, prec, f1, (tp + tn) / total)


def aggregate_values(values) -> tuple[float | None, float | None]:
    """Mean and population standard deviation (divide by N) of the defined values."""
    vals = np.array([v for v in values if v is not None], dtype=np.float64)
    if vals.size == 0:
        return None, None
    return float(vals.mean()), float(vals.std())


def aggregate(reports: list[MetricsReport]) -> dict[str, tuple[float | None, float | None]]:
    if not reports:
        raise ValueError("aggregate needs at least one report")
    return {m: aggregate_values(getattr(r, m) for r in reports) for m in METRICS}


# --- dataset construction -----------------------------------------------------------


class DatasetError(ValueError):
    pass


def build_balanced_dataset(segments: list[Segment], rng: SeededRng) -> list[Segment]:
    """Every seizure segment plus as many non-seizure segments drawn without replacement."""
    seizure = [s for s in segments if s.label == SEIZURE]
    non = [s for s in segments if s.label == NON_SEIZURE]
    if not seizure:
        raise DatasetError("no seizure segments available")
    if len(non) < len(seizure):
        raise DatasetError(f"only {len(non)} non-seizure segments for {len(seizure)} seizure segments")
    picks = rng.choice(len(non), len(seizure), replace=False)
    return seizure + [non[i] for i in picks]


def random_split(items: list, rng: SeededRng, ratio=(70, 15, 15)) -> tuple[list, list, list]:
    """Shuffle, then cut at ``floor(n*r0/sum)`` and ``floor(n*(r0+r1)/sum)``."""
    n = len(items)
    if n < 3:
        raise DatasetError("need at least 3 items to split")
    total = sum(ratio)
    if total <= 0 or any(r < 0 for r in ratio):
        raise ValueError(f"invalid split ratio {ratio}")
    a = n * ratio[0] // total
    b = n * (ratio[0] + ratio[1]) // total
    perm = rng.permutation(n)
    shuffled = [items[i] for i in perm]
    return shuffled[:a], shuffled[a:b], shuffled[b:]


def labels_of(segments: list[Segment]) -> np.ndarray:
    return np.array([s.label for s in segments], dtype=np.int64)


def channel_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over samples and time of an ``(N, T, C)`` array."""
    mean = x.mean(axis=(0, 1), dtype=np.float64)
    std = x.std(axis=(0, 1), dtype=np.float64)
    std[std == 0] = 1.0
    return mean.astype(np.float32), std.astype(np.float32)


# --- configuration -------------------------------------------------------------------

MODEL_DEFAULTS = {
    "indrnn": {"learning_rate": 4e-4, "epochs": 100, "optimizer": "adam"},
    "lstm": {"learning_rate": 7e-4, "epochs": 30, "optimizer": "rmsprop"},
    "cnn": {"learning_rate": 1e-3, "epochs": 50, "optimizer": "adam"},
}

SEGMENT_LENGTHS = (23, 30, 35, 40, 45, 50, 55, 60, 70, 80, 90, 100, 110)
SWEEP_DEPTHS = (6, 9, 12, 15)


@dataclass
class ExperimentConfig:
    data_dir: str | None = None
    summary_dir: str | None = None
    cache: str | None = None
    channels: list[str] = field(default_factory=lambda: list(DEFAULT_CHANNELS))
    segment_seconds: float = 23
    repetitions: int = 10
    split: tuple[int, int, int] = (70, 15, 15)
    seed: int = 0
    model: str = "indrnn"
    depth: int = 15
    hidden_sizes: list[int] | None = None
    fc1_hidden: int = 100
    recurrent_clip: float = 1.0
    lstm_hidden: int = 120
    lstm_dense: int = 60
    cnn_channels: list[int] = field(default_factory=lambda: list(CNN_CHANNELS))
    cnn_fc: list[int] = field(default_factory=lambda: list(CNN_FC))
    cnn_kernel: int = 5
    learning_rate: float | None = None
    epochs: int | None = None
    batch_size: int = 30
    optimizer: str | None = None
    decimation: int = 1
    normalize: bool = True
    epoch_selection: str = "best_validation_accuracy"
    lengths: list[float] = field(default_factory=lambda: list(SEGMENT_LENGTHS))
    depths: list[int] = field(default_factory=lambda: list(SWEEP_DEPTHS))
    # "depth.12" / "length.30" -> {field: value}
    overrides: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_DEFAULTS:
            raise ValueError(f"unknown model kind {self.model!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if len(self.split) != 3 or sum(self.split) != 100:
            raise ValueError(f"split ratio must have three parts summing to 100, got {self.split}")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")

    def effective(self, name: str):
        value = getattr(self, name)
        return MODEL_DEFAULTS[self.model][name] if value is None else value

    def with_override(self, key: str, **changes) -> "ExperimentConfig":
        merged = dict(self.overrides.get(key, {}))
        merged.update(changes)
        return dataclasses.replace(self, **coerce_fields(merged)) if merged else self

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.effective("learning_rate"), self.batch_size, self.effective("epochs"),
                           seed, self.effective("optimizer"), True, self.epoch_selection)

    def echo(self) -> dict:
        out = dataclasses.asdict(self)
        for name in ("learning_rate", "epochs", "optimizer"):
            out[name] = self.effective(name)
        out["split"] = list(self.split)
        return out


def _to_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list_of(kind):
    def conv(text):
        if isinstance(text, (list, tuple)):
            return [kind(v) for v in text]
        return [kind(v) for v in str(text).replace(",", " ").split()]
    return conv


def _optional(kind):
    def conv(text):
        if text is None or str(text).strip().lower() in ("", "none", "default"):
            return None
        return kind(text)
    return conv


_CONVERTERS = {
    "data_dir": _optional(str), "summary_dir": _optional(str), "cache": _optional(str),
    "channels": _list_of(str), "segment_seconds": float, "repetitions": int,
    "split": lambda t: tuple(_list_of(int)(t)), "seed": int, "model": str, "depth": int,
    "hidden_sizes": _optional(_list_of(int)), "fc1_hidden": int, "recurrent_clip": float,
    "lstm_hidden": int, "lstm_dense": int, "cnn_channels": _list_of(int), "cnn_fc": _list_of(int),
    "cnn_kernel": int, "learning_rate": _optional(float), "epochs": _optional(int), "batch_size": int,
    "optimizer": _optional(str), "decimation": int, "normalize": _to_bool, "epoch_selection": str,
    "lengths": _list_of(float), "depths": _list_of(int),
}
CONFIG_KEYS = tuple(_CONVERTERS)


def coerce_fields(values: dict) -> dict:
    out = {}
    for key, value in values.items():
        if key not in _CONVERTERS:
            raise KeyError(f"unknown configuration key {key!r}")
        out[key] = _CONVERTERS[key](value)
    return out


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment. ``override.<axis>.<value>.<key>`` nests."""
    flat: dict = {}
    overrides: dict[str, dict] = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {no}: expected key = value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key.startswith("override."):
            parts = key.split(".")
            if len(parts) != 4 or parts[1] not in ("depth", "length"):
                raise ValueError(f"config line {no}: override keys look like override.depth.12.epochs")
            if parts[3] not in _CONVERTERS:
                raise ValueError(f"config line {no}: unknown key {parts[3]!r}")
            axis_value = _axis_key(parts[1], parts[2])
            overrides.setdefault(axis_value, {})[parts[3]] = value
            continue
        if key not in _CONVERTERS:
            raise ValueError(f"config line {no}: unknown key {key!r}")
        flat[key] = value
    if overrides:
        flat["overrides"] = overrides
    return flat


def _axis_key(axis: str, value) -> str:
    v = float(value)
    return f"{axis}.{int(v) if v.is_integer() else v}"


def make_config(values: dict) -> ExperimentConfig:
    values = dict(values)
    overrides = values.pop("overrides", {})
    return ExperimentConfig(**coerce_fields(values), overrides=overrides)


# --- model construction ---------------------------------------------------------------


def build_experiment_model(config: ExperimentConfig, rng: SeededRng, input_channels: int):
    if config.model == "indrnn":
        sizes = config.hidden_sizes or hidden_sizes_for_depth(config.depth)
        mc = ModelConfig(block_hidden_sizes=list(sizes), fc1_hidden=config.fc1_hidden,
                         input_channels=input_channels, recurrent_clip=config.recurrent_clip)
        return build_indrnn_model(mc, rng)
    if config.model == "lstm":
        return build_lstm_baseline(input_channels, config.lstm_hidden, config.lstm_dense, rng=rng)
    return build_cnn_baseline(input_channels, config.cnn_channels, config.cnn_fc, config.cnn_kernel, rng=rng)


# --- cross-validation --------------------------------------------------------------------


@dataclass
class RepetitionResult:
    index: int
    report: MetricsReport
    selected_epoch: int
    sizes: tuple[int, int, int]
    history: list = field(default_factory=list)
    seconds: float = 0.0


@dataclass
class CvResult:
    config: dict
    repetitions: list[RepetitionResult]
    aggregate: dict[str, tuple[float | None, float | None]]
    seizure_segments: int
    non_seizure_segments: int


class ExperimentError(RuntimeError):
    def __init__(self, repetition: int, cause: Exception):
        super().__init__(f"repetition {repetition}: {cause}")
        self.repetition = repetition
        self.cause = cause


def run_repetition(config: ExperimentConfig, source, rep: int) -> RepetitionResult:
    t0 = time.perf_counter()
    rrng = SeededRng(config.seed, (rep,))
    balanced = build_balanced_dataset(source.segments, rrng.derive(0))
    parts = random_split(balanced, rrng.derive(1), config.split)
    xs = [source.load(p) for p in parts]
    ys = [labels_of(p) for p in parts]
    if config.normalize:
        mean, std = channel_stats(xs[0])
        xs = [(x - mean) / std for x in xs]
    model = build_experiment_model(config, rrng.derive(2), xs[0].shape[2])
    result = train(model, (xs[0], ys[0]), (xs[1], ys[1]), config.train_config(config.seed), rrng.derive(3))
    _, tp, fp, tn, fn = evaluate(model, xs[2], ys[2])
    report = compute_metrics(tp, fp, tn, fn)
    log.info("repetition %d: acc %.4f (epoch %d)", rep + 1, report.accuracy, result.selected_epoch)
    return RepetitionResult(rep + 1, report, result.selected_epoch, tuple(len(p) for p in parts),
                            [dataclasses.asdict(h) for h in result.history], time.perf_counter() - t0)


def run_cv(config: ExperimentConfig, source) -> CvResult:
    """Repeat: re-draw a balanced set, re-split 70:15:15, train, test."""
    reps = []
    for rep in range(config.repetitions):
        try:
            reps.append(run_repetition(config, source, rep))
        except (TrainingError, DatasetError) as exc:
            raise ExperimentError(rep + 1, exc) from exc
    n_seiz = sum(1 for s in source.segments if s.label == SEIZURE)
    return CvResult(config.echo(), reps, aggregate([r.report for r in reps]),
                    n_seiz, len(source.segments) - n_seiz)


@dataclass
class SweepResult:
    axis: str
    value: float
    seizure_segments: int
    aggregate: dict[str, tuple[float | None, float | None]]
    per_repetition: dict[str, list[float | None]]
    cv: CvResult


def _sweep_row(axis, value, cv: CvResult) -> SweepResult:
    per = {m: [getattr(r.report, m) for r in cv.repetitions] for m in METRICS}
    return SweepResult(axis, value, cv.seizure_segments, cv.aggregate, per, cv)


def sweep_depth(config: ExperimentConfig, source, depths=None) -> list[SweepResult]:
    """run_cv at each depth; ``override.depth.<d>.*`` keys tune each one."""
    rows = []
    for d in (depths or config.depths):
        cfg = config.with_override(_axis_key("depth", d), depth=d, hidden_sizes=None, model="indrnn")
        rows.append(_sweep_row("depth", d, run_cv(cfg, source)))
    return rows


def sweep_segment_lengths(config: ExperimentConfig, make_source, lengths=None, depth: int = 12) -> list[SweepResult]:
    """Re-segment at each length via ``make_source(seconds)`` and run_cv there."""
    rows = []
    for sec in (lengths or config.lengths):
        cfg = config.with_override(_axis_key("length", sec), segment_seconds=sec, depth=depth, model="indrnn")
        rows.append(_sweep_row("length", sec, run_cv(cfg, make_source(cfg))))
    return rows


# --- result documents -------------------------------------------------------------------


def _f4(v) -> str:
    return "undefined" if v is None else f"{v:.4f}"


def _pm(mean_std) -> str:
    mean, std = mean_std
    return "undefined" if mean is None else f"{mean:.4f}±{std:.4f}"


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def cv_table_csv(result: CvResult) -> str:
    """Per-repetition rows plus ``Ave.`` and ``Std.`` rows, four decimals."""
    header = ["Item"] + [METRIC_TITLES[m] for m in METRICS]
    rows = [header]
    for r in result.repetitions:
        rows.append([str(r.index)] + [_f4(getattr(r.report, m)) for m in METRICS])
    rows.append(["Ave."] + [_f4(result.aggregate[m][0]) for m in METRICS])
    rows.append(["Std."] + [_f4(result.aggregate[m][1]) for m in METRICS])
    return _csv(rows)


def sweep_table_csv(rows: list[SweepResult]) -> str:
    if rows and rows[0].axis == "length":
        out = [["Len.", "Num. Sei."] + [METRIC_TITLES[m] for m in METRICS]]
        for r in rows:
            out.append([f"{r.value:g}s", str(r.seizure_segments)] + [_pm(r.aggregate[m]) for m in METRICS])
    else:
        out = [["IndRNN layers"] + [METRIC_TITLES[m] for m in METRICS]]
        for r in rows:
            out.append([f"{r.value:g} layers"] + [_pm(r.aggregate[m]) for m in METRICS])
    return _csv(out)


def sweep_tidy_csv(rows: list[SweepResult]) -> str:
    """One line per (axis value, metric) for plotting."""
    out = [["axis", "value", "metric", "mean", "std", "seizure_segments"]]
    for r in rows:
        for m in METRICS:
            mean, std = r.aggregate[m]
            out.append([r.axis, f"{r.value:g}", m, _f4(mean), _f4(std), str(r.seizure_segments)])
    return _csv(out)


def cv_document(result: CvResult) -> dict:
    return {
        "config": result.config,
        "seizure_segments": result.seizure_segments,
        "non_seizure_segments": result.non_seizure_segments,
        "repetitions": [
            {"index": r.index, "metrics": r.report.as_dict(), "selected_epoch": r.selected_epoch,
             "split_sizes": list(r.sizes), "history": r.history}
            for r in result.repetitions
        ],
        "aggregate": {m: {"mean": v[0], "std": v[1]} for m, v in result.aggregate.items()},
    }


def sweep_document(rows: list[SweepResult]) -> dict:
    return {"rows": [{"axis": r.axis, "value": r.value, "seizure_segments": r.seizure_segments,
                      "aggregate": {m: {"mean": v[0], "std": v[1]} for m, v in r.aggregate.items()},
                      "per_repetition": r.per_repetition, "cv": cv_document(r.cv)} for r in rows]}


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
