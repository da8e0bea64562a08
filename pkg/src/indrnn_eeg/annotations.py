"""CHB-MIT ``chbXX-summary.txt`` parsing and the per-case file catalog."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path


class SummaryError(ValueError):
    pass


@dataclass
class SeizureAnnotation:
    file_name: str
    intervals: list[tuple[float, float]] = field(default_factory=list)

    def validate(self, duration: float | None = None) -> None:
        prev_end = None
        for start, end in self.intervals:
            if not 0 <= start < end:
                raise SummaryError(f"{self.file_name}: invalid seizure interval ({start}, {end})")
            if duration is not None and end > duration:
                raise SummaryError(f"{self.file_name}: seizure ({start}, {end}) exceeds duration {duration}")
            if prev_end is not None and start < prev_end:
                raise SummaryError(f"{self.file_name}: seizure intervals overlap or are unsorted")
            prev_end = end

    @property
    def case_id(self) -> str:
        return case_of(self.file_name)


def case_of(file_name: str) -> str:
    """``chb01_03.edf`` -> ``chb01``; falls back to the stem."""
    stem = Path(file_name).stem
    return stem.split("_", 1)[0]


_FILE = re.compile(r"^File Name:\s*(\S+)\s*$")
_COUNT = re.compile(r"^Number of Seizures in File:\s*(\d+)\s*$")
_TIME = re.compile(r"^Seizure(?:\s+(\d+))?\s+(Start|End)\s+Time:\s*(\d+(?:\.\d+)?)\s*(?:seconds|secs?|s)?\s*$",
                   re.IGNORECASE)
_ENTRY_INFO = re.compile(r"^File (Start|End) Time:")
_PREAMBLE = re.compile(r"^(Data Sampling Rate:|Channels? |Channel \d+:|\*+|#)")


def parse_chbmit_summary(text: str) -> list[SeizureAnnotation]:
    """Parse a CHB-MIT summary file into one annotation per file entry."""
    out: list[SeizureAnnotation] = []
    current = None  # [file, declared, starts, ends, line_no]

    def close():
        if current is None:
            return
        name, declared, starts, ends, line_no = current
        if declared is None:
            raise SummaryError(f"line {line_no}: entry {name} lacks 'Number of Seizures in File'")
        if len(starts) != declared or len(ends) != declared:
            raise SummaryError(f"line {line_no}: {name} declares {declared} seizures but lists "
                               f"{len(starts)} start and {len(ends)} end times")
        intervals = []
        for (s_line, s), (e_line, e) in zip(starts, ends):
            if e <= s:
                raise SummaryError(f"line {e_line}: seizure end {e} <= start {s} in {name}")
            intervals.append((s, e))
        ann = SeizureAnnotation(name, sorted(intervals))
        try:
            ann.validate()
        except SummaryError as exc:
            raise SummaryError(f"line {line_no}: {exc}") from None
        out.append(ann)

    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if m := _FILE.match(line):
            close()
            current = [m.group(1), None, [], [], no]
            continue
        if current is None:
            if line.startswith("Seizure") or line.startswith("Number of Seizures"):
                raise SummaryError(f"line {no}: seizure information outside a file entry")
            continue  # preamble (sampling rate, channel listing)
        if m := _COUNT.match(line):
            current[1] = int(m.group(1))
        elif m := _TIME.match(line):
            value = float(m.group(3))
            (current[2] if m.group(2).lower() == "start" else current[3]).append((no, value))
        elif _ENTRY_INFO.match(line) or _PREAMBLE.match(line):
            continue
        else:
            raise SummaryError(f"line {no}: cannot parse {line!r}")
    close()
    return out


def _fmt_seconds(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def format_chbmit_summary(annotations: list[SeizureAnnotation], sample_rate: int = 256,
                          channels: list[str] | None = None, numbered: bool = False) -> str:
    """Write annotations in the CHB-MIT summary dialect."""
    lines = [f"Data Sampling Rate: {sample_rate} Hz", "*" * 25, ""]
    if channels:
        lines.append("Channels in EDF Files:")
        lines.append("*" * 22)
        lines += [f"Channel {i}: {c}" for i, c in enumerate(channels, start=1)]
        lines.append("")
    for ann in annotations:
        lines.append(f"File Name: {ann.file_name}")
        lines.append(f"Number of Seizures in File: {len(ann.intervals)}")
        for k, (s, e) in enumerate(ann.intervals, start=1):
            tag = f"Seizure {k}" if numbered else "Seizure"
            lines.append(f"{tag} Start Time: {_fmt_seconds(s)} seconds")
            lines.append(f"{tag} End Time: {_fmt_seconds(e)} seconds")
        lines.append("")
    return "\n".join(lines)


EXCLUDED_FILES = frozenset({"chb12_27.edf", "chb12_28.edf", "chb12_29.edf"})


@dataclass
class CaseCatalog:
    """EDF files of one case with their annotations; excluded files are filtered out."""

    case_id: str
    entries: list[tuple[Path, SeizureAnnotation]]
    excluded: frozenset[str] = EXCLUDED_FILES

    def files(self) -> list[tuple[Path, SeizureAnnotation]]:
        return [(p, a) for p, a in self.entries if p.name not in self.excluded]


def discover_catalogs(data_dir, summary_dir=None, excluded=EXCLUDED_FILES) -> tuple[list[CaseCatalog], list[str]]:
    """Match every ``*-summary.txt`` entry to an EDF file below ``data_dir``.

    Returns the catalogs (sorted by case) and a list of problems found
    (unmatched files, unparseable summaries).
    """
    data_dir = Path(data_dir)
    summary_dir = Path(summary_dir) if summary_dir else data_dir
    edfs = {p.name: p for p in sorted(data_dir.rglob("*.edf"))}
    problems: list[str] = []
    by_case: dict[str, list] = {}
    seen = set()
    for summary in sorted(summary_dir.rglob("*-summary.txt")):
        try:
            anns = parse_chbmit_summary(summary.read_text(encoding="utf-8", errors="replace"))
        except SummaryError as exc:
            problems.append(f"{summary}: {exc}")
            continue
        for ann in anns:
            path = edfs.get(ann.file_name)
            if path is None:
                problems.append(f"{summary}: listed file {ann.file_name} not found")
                continue
            seen.add(ann.file_name)
            by_case.setdefault(ann.case_id, []).append((path, ann))
    for name in sorted(set(edfs) - seen):
        problems.append(f"{edfs[name]}: no summary entry; skipped")
    catalogs = [CaseCatalog(case, sorted(entries, key=lambda e: e[0].name), excluded)
                for case, entries in sorted(by_case.items())]
    return catalogs, problems
