"""Fixed-length windowing of recordings, seizure labeling and segment caches."""

from __future__ import annotations

import io
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import CaseCatalog, SeizureAnnotation
from .edf import EdfError, normalize_label, read_edf_header, read_recording, select_channels
from .io_utils import atomic_write_bytes

log = logging.getLogger(__name__)

SEIZURE, NON_SEIZURE = 1, 0


@dataclass(frozen=True)
class Segment:
    case_id: str
    file_id: str
    start_sample: int
    length_samples: int
    label: int
    seizure_overlap_seconds: float

    @property
    def end_sample(self) -> int:
        return self.start_sample + self.length_samples


def _overlap(a: float, b: float, intervals) -> float:
    """Total measure of ``[a, b)`` covered by the seizure intervals."""
    return float(sum(max(0.0, min(e, b) - max(s, a)) for s, e in intervals))


def segment_record(duration_seconds: float, intervals, segment_seconds: float, sample_rate: float = 256,
                   case_id: str = "", file_id: str = "") -> list[Segment]:
    """Split a record into consecutive non-overlapping windows from t=0.

    A trailing remainder that holds seizure data becomes one extra full-length
    window ending at the record end; a seizure-free remainder is dropped. A
    window is a seizure segment iff it overlaps an interval with positive
    measure.
    """
    if isinstance(intervals, SeizureAnnotation):
        intervals = intervals.intervals
    if duration_seconds <= 0:
        raise ValueError("record duration must be positive")
    total = int(round(duration_seconds * sample_rate))
    length = int(round(segment_seconds * sample_rate))
    if length <= 0:
        raise ValueError("segment length must be positive")
    if length > total:
        log.info("%s: record (%.1f s) shorter than a %.1f s segment; skipped",
                 file_id or "record", duration_seconds, segment_seconds)
        return []

    def make(start: int) -> Segment:
        ov = _overlap(start / sample_rate, (start + length) / sample_rate, intervals)
        return Segment(case_id, file_id, start, length, SEIZURE if ov > 0 else NON_SEIZURE, ov)

    full = total // length
    segments = [make(i * length) for i in range(full)]
    if total % length:
        rem_start = full * length
        if _overlap(rem_start / sample_rate, total / sample_rate, intervals) > 0:
            segments.append(make(total - length))
    return segments


@dataclass
class SeizureStats:
    seizure_segments: int
    non_seizure_segments: int
    mean_seizure_seconds: float | None
    frac_below_7s: float | None
    frac_above_10s: float | None
    frac_above_17s: float | None

    def lines(self) -> list[str]:
        def pct(v):
            return "n/a" if v is None else f"{100 * v:.1f}%"

        mean = "n/a" if self.mean_seizure_seconds is None else f"{self.mean_seizure_seconds:.2f} s"
        return [
            f"seizure segments:      {self.seizure_segments}",
            f"non-seizure segments:  {self.non_seizure_segments}",
            f"mean seizure content:  {mean}",
            f"seizure content < 7 s: {pct(self.frac_below_7s)}",
            f"seizure content > 10 s: {pct(self.frac_above_10s)}",
            f"seizure content > 17 s: {pct(self.frac_above_17s)}",
        ]


def seizure_stats(segments: list[Segment]) -> SeizureStats:
    content = np.array([s.seizure_overlap_seconds for s in segments if s.label == SEIZURE])
    n_non = sum(1 for s in segments if s.label == NON_SEIZURE)
    if content.size == 0:
        return SeizureStats(0, n_non, None, None, None, None)
    return SeizureStats(int(content.size), n_non, float(content.mean()), float(np.mean(content < 7)),
                        float(np.mean(content > 10)), float(np.mean(content > 17)))


# --- corpus-level segmentation --------------------------------------------------


@dataclass
class CorpusIndex:
    """Segments of a corpus and the EDF path each file id resolves to."""

    segments: list[Segment]
    files: dict[str, Path]
    sample_rate: float
    problems: list[str]


def segment_catalogs(catalogs: list[CaseCatalog], segment_seconds: float, channels: list[str]) -> CorpusIndex:
    """Segment every eligible file; files lacking a required channel are skipped."""
    segments: list[Segment] = []
    files: dict[str, Path] = {}
    problems: list[str] = []
    rates = set()
    wanted = {normalize_label(c) for c in channels}
    for cat in catalogs:
        for path, ann in cat.files():
            try:
                header = read_edf_header(path)
            except (OSError, EdfError) as exc:
                problems.append(f"{path}: {exc}")
                continue
            present = {normalize_label(s.label) for s in header.signals}
            lacking = sorted(wanted - present)
            if lacking:
                problems.append(f"{path}: missing channels {', '.join(lacking)}; skipped")
                continue
            idx = [i for i, s in enumerate(header.signals) if normalize_label(s.label) in wanted]
            file_rates = {header.sample_rate(i) for i in idx}
            if len(file_rates) != 1:
                problems.append(f"{path}: selected channels have mixed rates; skipped")
                continue
            rate = file_rates.pop()
            rates.add(rate)
            try:
                ann.validate(header.duration_seconds)
            except ValueError as exc:
                problems.append(f"{path}: {exc}; skipped")
                continue
            segs = segment_record(header.duration_seconds, ann.intervals, segment_seconds, rate,
                                  cat.case_id, path.name)
            if not segs:
                problems.append(f"{path}: shorter than one segment; skipped")
            files[path.name] = path
            segments.extend(segs)
    if len(rates) > 1:
        raise EdfError(f"corpus mixes sample rates {sorted(rates)}")
    return CorpusIndex(segments, files, rates.pop() if rates else 256.0, problems)


def decimate(x: np.ndarray, factor: int, axis: int = -1) -> np.ndarray:
    """Block-mean decimation along ``axis``; a ragged tail is discarded."""
    if factor < 1:
        raise ValueError("decimation factor must be >= 1")
    if factor == 1:
        return x
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1] // factor * factor
    out = x[..., :n].reshape(x.shape[:-1] + (n // factor, factor)).mean(axis=-1)
    return np.moveaxis(out, -1, axis).astype(x.dtype, copy=False)


class EdfSegmentSource:
    """Loads segment samples on demand from EDF files, one file at a time."""

    def __init__(self, index: CorpusIndex, channels: list[str], decimation: int = 1, cache_files: int = 2):
        self.index = index
        self.channels = list(channels)
        self.decimation = decimation
        self._recent: OrderedDict[str, np.ndarray] = OrderedDict()
        self._cache_files = cache_files

    @property
    def segments(self) -> list[Segment]:
        return self.index.segments

    def _file(self, file_id: str) -> np.ndarray:
        if file_id in self._recent:
            self._recent.move_to_end(file_id)
            return self._recent[file_id]
        rec = read_recording(self.index.files[file_id])
        data = select_channels(rec, self.channels)
        self._recent[file_id] = data
        while len(self._recent) > self._cache_files:
            self._recent.popitem(last=False)
        return data

    def load(self, segments: list[Segment]) -> np.ndarray:
        """Samples as ``(N, T, C)`` float32, in the order given."""
        out = [None] * len(segments)
        order = sorted(range(len(segments)), key=lambda i: (segments[i].file_id, segments[i].start_sample))
        for i in order:
            seg = segments[i]
            data = self._file(seg.file_id)[:, seg.start_sample:seg.end_sample]
            out[i] = decimate(data, self.decimation).T
        return np.stack(out).astype(np.float32)


class CachedSegmentSource:
    def __init__(self, cache: "SegmentCache", decimation: int = 1):
        self.cache = cache
        self.decimation = decimation
        self._pos = {seg: i for i, seg in enumerate(cache.segments)}

    @property
    def segments(self) -> list[Segment]:
        return self.cache.segments

    @property
    def channels(self) -> list[str]:
        return self.cache.channels

    def load(self, segments: list[Segment]) -> np.ndarray:
        rows = [decimate(self.cache.samples[self._pos[s]], self.decimation).T for s in segments]
        return np.stack(rows).astype(np.float32)


# --- segment cache file -----------------------------------------------------------

CACHE_MAGIC = b"IRNNSEGS"
CACHE_VERSION = 1


class CacheError(ValueError):
    pass


@dataclass
class SegmentCache:
    """In-memory segment cache.

    ``samples[i]`` is ``(channels, length_samples // decimation)`` float32.
    """

    channels: list[str]
    sample_rate: float
    decimation: int
    segments: list[Segment]
    samples: list[np.ndarray]


def _pack_str(buf, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)) + raw)


def cache_bytes(cache: SegmentCache) -> bytes:
    """Serialize a segment cache.

    Layout (little-endian): magic ``IRNNSEGS``; u16 version; u16 channel
    count then per channel u16 length + UTF-8 label; f64 sample rate; u16
    decimation; u32 segment count; then per segment: u16+UTF-8 case id,
    u16+UTF-8 file id, u64 start sample, u32 length (original samples), u8
    label (1 seizure), f64 seizure overlap seconds, and
    ``channels * (length // decimation)`` f32 samples, channel-major.
    """
    buf = io.BytesIO()
    buf.write(CACHE_MAGIC + struct.pack("<HH", CACHE_VERSION, len(cache.channels)))
    for c in cache.channels:
        _pack_str(buf, c)
    buf.write(struct.pack("<dHI", cache.sample_rate, cache.decimation, len(cache.segments)))
    for seg, data in zip(cache.segments, cache.samples):
        expected = (len(cache.channels), seg.length_samples // cache.decimation)
        if data.shape != expected:
            raise CacheError(f"segment {seg.file_id}@{seg.start_sample}: samples {data.shape} != {expected}")
        _pack_str(buf, seg.case_id)
        _pack_str(buf, seg.file_id)
        buf.write(struct.pack("<QIBd", seg.start_sample, seg.length_samples, seg.label, seg.seizure_overlap_seconds))
        buf.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    return buf.getvalue()


def _take(buf, n: int) -> bytes:
    pos = buf.tell()
    data = buf.read(n)
    if len(data) != n:
        raise CacheError(f"segment cache truncated at byte {pos}")
    return data


def _unpack_str(buf) -> str:
    (n,) = struct.unpack("<H", _take(buf, 2))
    return _take(buf, n).decode("utf-8")


def parse_cache(data: bytes) -> SegmentCache:
    buf = io.BytesIO(data)
    if _take(buf, len(CACHE_MAGIC)) != CACHE_MAGIC:
        raise CacheError("not a segment cache (bad magic)")
    version, nch = struct.unpack("<HH", _take(buf, 4))
    if version != CACHE_VERSION:
        raise CacheError(f"unsupported segment cache version {version}")
    channels = [_unpack_str(buf) for _ in range(nch)]
    rate, dec, count = struct.unpack("<dHI", _take(buf, struct.calcsize("<dHI")))
    segments, samples = [], []
    rec = struct.calcsize("<QIBd")
    for _ in range(count):
        case_id = _unpack_str(buf)
        file_id = _unpack_str(buf)
        start, length, label, ov = struct.unpack("<QIBd", _take(buf, rec))
        n = nch * (length // dec)
        arr = np.frombuffer(_take(buf, 4 * n), dtype="<f4").reshape(nch, length // dec)
        segments.append(Segment(case_id, file_id, start, length, label, ov))
        samples.append(arr.astype(np.float32))
    return SegmentCache(channels, rate, dec, segments, samples)


def build_cache(source: EdfSegmentSource, sample_rate: float) -> SegmentCache:
    samples = []
    for seg in source.segments:
        samples.append(source.load([seg])[0].T.copy())
    return SegmentCache(source.channels, sample_rate, source.decimation, list(source.segments), samples)


def write_cache(path, cache: SegmentCache) -> None:
    atomic_write_bytes(path, cache_bytes(cache))


def read_cache(path) -> SegmentCache:
    return parse_cache(Path(path).read_bytes())
