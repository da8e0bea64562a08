"""EDF reading/writing, calibration and channel selection.

Only plain EDF is handled: a fixed-width ASCII header followed by data
records of interleaved 16-bit little-endian integer blocks, one block per
signal.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

# per-signal header fields: (name, width) in on-disk order
_SIGNAL_FIELDS = (
    ("label", 16), ("transducer", 80), ("physical_dimension", 8),
    ("physical_min", 8), ("physical_max", 8), ("digital_min", 8), ("digital_max", 8),
    ("prefiltering", 80), ("samples_per_record", 8), ("reserved", 32),
)
_NUMERIC_SIGNAL_FIELDS = {"physical_min": float, "physical_max": float,
                          "digital_min": int, "digital_max": int, "samples_per_record": int}

DUMMY_LABELS = {"", "-", "--", "."}


class EdfError(ValueError):
    """Structural problem in an EDF byte stream."""


@dataclass(frozen=True)
class SignalSpec:
    label: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    samples_per_record: int
    transducer: str = ""
    physical_dimension: str = "uV"
    prefiltering: str = ""
    reserved: str = ""

    def validate(self, where: str = "") -> None:
        if self.digital_min >= self.digital_max:
            raise EdfError(f"{where}signal {self.label!r}: digital_min {self.digital_min} >= digital_max {self.digital_max}")
        if self.physical_min == self.physical_max:
            raise EdfError(f"{where}signal {self.label!r}: physical_min == physical_max ({self.physical_min})")
        if self.samples_per_record <= 0:
            raise EdfError(f"{where}signal {self.label!r}: samples_per_record must be positive")


@dataclass(frozen=True)
class EdfHeader:
    signals: tuple[SignalSpec, ...]
    num_data_records: int
    record_duration: float
    patient_id: str = ""
    recording_id: str = ""
    start_date: str = "01.01.00"
    start_time: str = "00.00.00"
    reserved: str = ""
    version: str = "0"

    @property
    def num_signals(self) -> int:
        return len(self.signals)

    @property
    def header_bytes(self) -> int:
        return 256 + 256 * self.num_signals

    @property
    def record_bytes(self) -> int:
        return 2 * sum(s.samples_per_record for s in self.signals)

    def sample_rate(self, i: int) -> float:
        return self.signals[i].samples_per_record / self.record_duration

    @property
    def duration_seconds(self) -> float:
        return self.num_data_records * self.record_duration


@dataclass
class Recording:
    """Physical-unit EEG, one row per channel."""

    labels: list[str]
    sample_rate: float
    samples: np.ndarray  # (channels, total_samples)
    meta: dict = field(default_factory=dict)

    @property
    def duration_seconds(self) -> float:
        return self.samples.shape[1] / self.sample_rate

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]


# --- field formatting ------------------------------------------------------------


def _ascii_field(text: str, width: int, what: str) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > width:
        raise EdfError(f"{what} {text!r} does not fit in {width} bytes")
    return raw.ljust(width, b" ")


def _compact_exponent(text: str) -> str:
    """``1.5e+08`` -> ``1.5e8``, ``1e-09`` -> ``1e-9``."""
    if "e" not in text:
        return text
    mant, exp = text.split("e")
    return f"{mant}e{int(exp)}"


def format_number(value, width: int = 8) -> str:
    """Shortest decimal text of at most ``width`` chars that parses back to ``value``."""
    if isinstance(value, (int, np.integer)) or float(value).is_integer() and abs(value) < 1e8:
        text = str(int(value))
        if len(text) <= width:
            return text
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    if len(text) <= width and float(text) == float(value):
        return text
    for digits in range(width, 0, -1):
        text = _compact_exponent(f"{float(value):.{digits}g}")
        if len(text) <= width:
            return text
    raise EdfError(f"number {value!r} cannot be written in {width} characters")


def header_to_bytes(header: EdfHeader) -> bytes:
    parts = [
        _ascii_field(header.version, 8, "version"),
        _ascii_field(header.patient_id, 80, "patient id"),
        _ascii_field(header.recording_id, 80, "recording id"),
        _ascii_field(header.start_date, 8, "start date"),
        _ascii_field(header.start_time, 8, "start time"),
        _ascii_field(str(header.header_bytes), 8, "header bytes"),
        _ascii_field(header.reserved, 44, "reserved"),
        _ascii_field(str(header.num_data_records), 8, "number of data records"),
        _ascii_field(format_number(header.record_duration), 8, "record duration"),
        _ascii_field(str(header.num_signals), 4, "number of signals"),
    ]
    for name, width in _SIGNAL_FIELDS:
        for sig in header.signals:
            value = getattr(sig, name)
            text = format_number(value, width) if name in _NUMERIC_SIGNAL_FIELDS else value
            parts.append(_ascii_field(text, width, f"signal {sig.label!r} {name}"))
    return b"".join(parts)


def write_edf(header: EdfHeader, digital: list[np.ndarray]) -> bytes:
    """Serialize ``digital`` per-signal integer samples under ``header``."""
    if len(digital) != header.num_signals:
        raise EdfError(f"{len(digital)} sample arrays for {header.num_signals} signals")
    for i, sig in enumerate(header.signals):
        sig.validate()
        expected = sig.samples_per_record * header.num_data_records
        if len(digital[i]) != expected:
            raise EdfError(f"signal {sig.label!r} has {len(digital[i])} samples, expected {expected}")
        if np.any(digital[i] < sig.digital_min) or np.any(digital[i] > sig.digital_max):
            raise EdfError(f"signal {sig.label!r} has samples outside its digital range")
    blocks = [np.asarray(d, dtype="<i2").reshape(header.num_data_records, sig.samples_per_record)
              for d, sig in zip(digital, header.signals)]
    body = np.concatenate(blocks, axis=1) if blocks else np.zeros((header.num_data_records, 0), "<i2")
    return header_to_bytes(header) + body.astype("<i2").tobytes()


# --- parsing -------------------------------------------------------------------------


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, width: int, what: str) -> str:
        if self.pos + width > len(self.data):
            raise EdfError(f"truncated header: {what} at byte {self.pos} needs {width} bytes, "
                           f"file has {len(self.data)}")
        raw = self.data[self.pos:self.pos + width]
        try:
            text = raw.decode("ascii")
        except UnicodeDecodeError:
            raise EdfError(f"non-ASCII bytes in {what} at byte {self.pos}") from None
        self.pos += width
        return text.strip()

    def number(self, width: int, what: str, kind=int):
        start = self.pos
        text = self.take(width, what)
        try:
            return kind(text)
        except ValueError:
            raise EdfError(f"non-numeric {what} {text!r} at byte {start}") from None


def _parse_header(data: bytes) -> EdfHeader:
    cur = _Cursor(data)
    version = cur.take(8, "version")
    if version != "0":
        raise EdfError(f"unsupported EDF version field {version!r} at byte 0")
    patient = cur.take(80, "patient id")
    recording = cur.take(80, "recording id")
    start_date = cur.take(8, "start date")
    start_time = cur.take(8, "start time")
    header_bytes = cur.number(8, "header byte count")
    reserved = cur.take(44, "reserved")
    num_records = cur.number(8, "number of data records")
    duration = cur.number(8, "record duration", float)
    ns = cur.number(4, "number of signals")
    if ns < 0:
        raise EdfError(f"negative signal count {ns} at byte 252")
    if header_bytes != 256 + 256 * ns:
        raise EdfError(f"header byte count {header_bytes} at byte 184 inconsistent with "
                       f"{ns} signals (expected {256 + 256 * ns})")
    if duration <= 0:
        raise EdfError(f"record duration must be positive, got {duration} at byte 244")

    columns: dict[str, list] = {}
    for name, width in _SIGNAL_FIELDS:
        kind = _NUMERIC_SIGNAL_FIELDS.get(name)
        vals = []
        for i in range(ns):
            what = f"signal {i} {name}"
            vals.append(cur.number(width, what, kind) if kind else cur.take(width, what))
        columns[name] = vals
    signals = tuple(SignalSpec(**{name: columns[name][i] for name, _ in _SIGNAL_FIELDS}) for i in range(ns))
    for i, sig in enumerate(signals):
        sig.validate(f"header byte {256 + 120 * ns + 8 * i}: ")
    return EdfHeader(signals, num_records, duration, patient, recording, start_date, start_time,
                     reserved, version)


def _resolve_records(header: EdfHeader, total_bytes: int) -> EdfHeader:
    """Check the byte count against the header; infer an unknown (-1) record count."""
    if header.num_data_records == -1 and header.record_bytes:
        header = replace(header, num_data_records=(total_bytes - header.header_bytes) // header.record_bytes)
    expected = header.header_bytes + header.num_data_records * header.record_bytes
    if total_bytes < expected:
        raise EdfError(f"truncated data: expected {expected} bytes for {header.num_data_records} records, "
                       f"file has {total_bytes}")
    if total_bytes > expected:
        log.warning("ignoring %d trailing bytes after the last data record", total_bytes - expected)
    return header


def parse_edf(data: bytes) -> tuple[EdfHeader, list[np.ndarray]]:
    """Decode an EDF byte string into its header and per-signal digital samples."""
    header = _resolve_records(_parse_header(data), len(data))
    per_record = header.record_bytes // 2
    raw = np.frombuffer(data, dtype="<i2", count=header.num_data_records * per_record,
                        offset=header.header_bytes)
    raw = raw.reshape(header.num_data_records, per_record)
    digital, col = [], 0
    for sig in header.signals:
        digital.append(raw[:, col:col + sig.samples_per_record].reshape(-1).astype(np.int16))
        col += sig.samples_per_record
    return header, digital


def read_edf_header(path) -> EdfHeader:
    """Parse only the header of an EDF file (the size is still checked)."""
    with open(path, "rb") as fh:
        head = fh.read(256)
        try:
            ns = int(head[252:256].decode("ascii").strip())
        except ValueError:
            raise EdfError(f"{path}: non-numeric signal count at byte 252") from None
        head += fh.read(256 * max(ns, 0))
    return _resolve_records(_parse_header(head), os.path.getsize(path))


def read_edf(path) -> tuple[EdfHeader, list[np.ndarray]]:
    with open(path, "rb") as fh:
        return parse_edf(fh.read())


def digital_to_physical(digital: np.ndarray, signal: SignalSpec) -> np.ndarray:
    """Linear EDF calibration to physical units (float64).

    Written as an interpolation between the two calibration points so the
    endpoints map exactly.
    """
    frac = (np.asarray(digital, np.float64) - signal.digital_min) / (signal.digital_max - signal.digital_min)
    return signal.physical_min * (1.0 - frac) + signal.physical_max * frac


def physical_to_digital(physical: np.ndarray, signal: SignalSpec) -> np.ndarray:
    frac = (np.asarray(physical, np.float64) - signal.physical_min) / (signal.physical_max - signal.physical_min)
    d = np.rint(signal.digital_min + frac * (signal.digital_max - signal.digital_min))
    return np.clip(d, signal.digital_min, signal.digital_max).astype(np.int16)


# --- recordings and channels ---------------------------------------------------------


def normalize_label(label: str) -> str:
    return " ".join(label.split()).upper()


def to_recording(header: EdfHeader, digital: list[np.ndarray], dtype=np.float32, name: str = "") -> Recording:
    """Physical-unit recording of all non-dummy signals.

    Dummy channels (labels such as ``-``) are dropped with a logged notice.
    """
    keep = []
    for i, sig in enumerate(header.signals):
        if normalize_label(sig.label) in DUMMY_LABELS:
            log.info("%sdropping dummy channel %d (%r)", f"{name}: " if name else "", i, sig.label)
            continue
        keep.append(i)
    if not keep:
        raise EdfError("no usable signals")
    rates = {header.sample_rate(i) for i in keep}
    if len(rates) != 1:
        raise EdfError(f"signals have differing sample rates {sorted(rates)}")
    samples = np.stack([digital_to_physical(digital[i], header.signals[i]) for i in keep]).astype(dtype)
    return Recording([header.signals[i].label for i in keep], rates.pop(), samples, {"name": name})


def read_recording(path, dtype=np.float32) -> Recording:
    header, digital = read_edf(path)
    return to_recording(header, digital, dtype, name=str(path))


class ChannelError(ValueError):
    pass


def has_missing_values(row: np.ndarray) -> bool:
    """A channel flat-lined at one value throughout is treated as missing."""
    return row.size == 0 or bool(np.all(row == row[0]))


def select_channels(recording: Recording, required: list[str]) -> np.ndarray:
    """Rows of ``recording`` in the order of ``required`` labels.

    Labels compare after whitespace/case normalization. Duplicate labels whose
    samples are identical collapse to one; any other duplicate is an error.
    """
    wanted = [normalize_label(r) for r in required]
    repeated = sorted({r for r, w in zip(required, wanted) if wanted.count(w) > 1})
    if repeated:
        raise ChannelError(f"duplicate labels requested: {', '.join(repeated)}")
    index: dict[str, list[int]] = {}
    for i, label in enumerate(recording.labels):
        index.setdefault(normalize_label(label), []).append(i)
    missing, duplicate, flat = [], [], []
    rows = []
    for label in required:
        hits = index.get(normalize_label(label), [])
        if not hits:
            missing.append(label)
            continue
        first = recording.samples[hits[0]]
        if any(not np.array_equal(first, recording.samples[j]) for j in hits[1:]):
            duplicate.append(label)
            continue
        if has_missing_values(first):
            flat.append(label)
            continue
        rows.append(first)
    problems = []
    if missing:
        problems.append(f"missing channels: {', '.join(missing)}")
    if duplicate:
        problems.append(f"ambiguous duplicate channels: {', '.join(duplicate)}")
    if flat:
        problems.append(f"channels with missing values: {', '.join(flat)}")
    if problems:
        raise ChannelError("; ".join(problems))
    return np.stack(rows)


DEFAULT_CHANNELS = [
    "FP1-F7", "F7-T7", "T7-P7", "P7-O1", "FP1-F3", "F3-C3", "C3-P3", "P3-O1",
    "FP2-F4", "F4-C4", "C4-P4", "P4-O2", "FP2-F8", "F8-T8", "T8-P8", "P8-O2", "FZ-CZ",
]


def load_channel_list(path) -> list[str]:
    """One label per line; blank lines and ``#`` comments ignored."""
    labels = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                labels.append(line)
    if not labels:
        raise ChannelError(f"channel list {path} is empty")
    return labels


def make_header(labels: list[str], sample_rate: int, num_records: int, record_duration: float = 1.0,
                physical=(-3276.8, 3276.7), digital=(-32768, 32767), **kw) -> EdfHeader:
    """Convenience constructor for uniform-rate headers."""
    spr = int(round(sample_rate * record_duration))
    sig = SignalSpec("", physical[0], physical[1], digital[0], digital[1], spr)
    return EdfHeader(tuple(replace(sig, label=lb) for lb in labels), num_records, record_duration, **kw)
