"""Synthetic EEG corpora in the CHB-MIT layout, for desk-scale runs.

Background activity is summed octave noise (roughly 1/f power); seizure
spans add a 3-8 Hz rhythm with two harmonics on every channel.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .annotations import SeizureAnnotation, format_chbmit_summary
from .edf import DEFAULT_CHANNELS, Recording, make_header, physical_to_digital, write_edf
from .io_utils import atomic_write_bytes, atomic_write_text
from .numerics import SeededRng

_HARMONICS = (1.0, 0.5, 0.25)
_RAMP_SECONDS = 0.25
_HARMONIC_POWER = sum(a * a for a in _HARMONICS) / 2  # mean square of the unit-amplitude rhythm


def octave_noise(rng: SeededRng, n: int, octaves: int = 8) -> np.ndarray:
    """Unit-variance noise whose power falls off roughly as 1/f."""
    out = np.zeros(n)
    for k in range(octaves):
        step = 2 ** k
        coarse = rng.normal(size=n // step + 2)
        # linear interpolation of the coarse noise back to full rate
        grid = np.arange(n) / step
        out += np.interp(grid, np.arange(coarse.size), coarse) * np.sqrt(step)
    return out / out.std()


def synth_eeg(rng: SeededRng, duration_seconds: int, seizure_intervals, channels=None,
              sample_rate: int = 256, seizure_gain: float = 6.0, file_name: str = "synthetic.edf"):
    """Generate one recording and its annotation.

    ``seizure_gain`` sets the seizure-span to background variance ratio
    (before onset/offset ramps); it must be at least 4.
    """
    if seizure_gain < 4:
        raise ValueError("seizure_gain must be >= 4")
    channels = list(channels or DEFAULT_CHANNELS)
    n = int(duration_seconds * sample_rate)
    intervals = sorted((float(s), float(e)) for s, e in seizure_intervals)
    ann = SeizureAnnotation(file_name, intervals)
    ann.validate(duration_seconds)

    nch = len(channels)
    shared = octave_noise(rng, n)
    bg_std = rng.uniform(20.0, 40.0, nch)
    mix = rng.uniform(0.2, 0.5, nch)
    data = np.empty((nch, n))
    for c in range(nch):
        own = octave_noise(rng, n)
        sig = np.sqrt(1 - mix[c] ** 2) * own + mix[c] * shared
        data[c] = bg_std[c] * sig / sig.std()

    t = np.arange(n) / sample_rate
    weights = rng.uniform(0.8, 1.2, nch)
    weights /= np.sqrt(np.mean(weights ** 2))
    for start, end in intervals:
        i0, i1 = int(round(start * sample_rate)), int(round(end * sample_rate))
        f0 = rng.uniform(3.0, 8.0)
        phase = rng.uniform(0, 2 * np.pi, nch)
        span = t[i0:i1] - start
        ramp = np.minimum(1.0, np.minimum(span + 1 / sample_rate, end - start - span) / _RAMP_SECONDS)
        # target: added power = gain * background power, so the ratio exceeds the gain
        amp = np.sqrt(seizure_gain / _HARMONIC_POWER) * bg_std * weights
        for c in range(nch):
            rhythm = sum(a * np.sin(2 * np.pi * (k + 1) * f0 * span + (k + 1) * phase[c])
                         for k, a in enumerate(_HARMONICS))
            data[c, i0:i1] += amp[c] * ramp * rhythm
    rec = Recording(channels, float(sample_rate), data.astype(np.float32), {"name": file_name})
    return rec, ann


def variance_ratio(rec: Recording, ann: SeizureAnnotation) -> float:
    """Seizure-span variance over background variance, pooled across channels."""
    mask = np.zeros(rec.num_samples, bool)
    for s, e in ann.intervals:
        mask[int(round(s * rec.sample_rate)):int(round(e * rec.sample_rate))] = True
    if not mask.any() or mask.all():
        raise ValueError("need both seizure and background samples")
    x = rec.samples.astype(np.float64)
    return float(x[:, mask].var(axis=1).mean() / x[:, ~mask].var(axis=1).mean())


def _place_seizures(rng: SeededRng, count: int, duration: int, lo: int, hi: int, margin: int = 5):
    """Non-overlapping integer-second intervals inside ``[margin, duration - margin]``."""
    placed: list[tuple[int, int]] = []
    for _ in range(count):
        for _attempt in range(1000):
            length = int(rng.integers(lo, hi + 1))
            if duration - 2 * margin <= length:
                break
            start = int(rng.integers(margin, duration - margin - length))
            if all(start + length + margin <= s or e + margin <= start for s, e in placed):
                placed.append((start, start + length))
                break
        else:
            raise ValueError("could not place seizures; increase duration or reduce count")
    return sorted(placed)


SYNTH_EXTRA_CHANNELS = ["CZ-PZ", "-", "T8-P8"]


def write_synthetic_corpus(out_dir, seed: int = 0, cases: int = 6, duration: int = 600,
                           seizures_per_case: int = 4, files_per_case: int = 2,
                           seizure_seconds=(60, 120), sample_rate: int = 256,
                           seizure_gain: float = 8.0) -> dict:
    """Write ``chbNN/chbNN_MM.edf`` files plus ``chbNN-summary.txt`` per case.

    Each file carries the 17 default channels plus a CZ-PZ channel, a dummy
    ``-`` channel and a bitwise duplicate of T8-P8, as CHB-MIT files do.
    Returns a dict mapping file name to its seizure intervals.
    """
    out_dir = Path(out_dir)
    root = SeededRng(seed)
    truth: dict[str, list[tuple[int, int]]] = {}
    labels = DEFAULT_CHANNELS + SYNTH_EXTRA_CHANNELS
    for case in range(1, cases + 1):
        case_id = f"chb{case:02d}"
        crng = root.derive(case)
        per_file = [0] * files_per_case
        for _ in range(seizures_per_case):
            per_file[int(crng.integers(0, files_per_case))] += 1
        anns = []
        for f in range(files_per_case):
            name = f"{case_id}_{f + 1:02d}.edf"
            frng = crng.derive(f)
            intervals = _place_seizures(frng, per_file[f], duration, *seizure_seconds)
            rec, ann = synth_eeg(frng, duration, intervals, DEFAULT_CHANNELS + ["CZ-PZ"],
                                 sample_rate, seizure_gain, name)
            header = make_header(labels, sample_rate, duration, 1.0,
                                 patient_id=case_id, recording_id=f"synthetic seed {seed}")
            sig = header.signals[0]
            digital = [physical_to_digital(row, sig) for row in rec.samples]
            digital.append(np.zeros(rec.num_samples, np.int16))          # dummy "-"
            digital.append(digital[DEFAULT_CHANNELS.index("T8-P8")].copy())
            atomic_write_bytes(out_dir / case_id / name, write_edf(header, digital))
            anns.append(ann)
            truth[name] = intervals
        atomic_write_text(out_dir / case_id / f"{case_id}-summary.txt",
                          format_chbmit_summary(anns, sample_rate, labels))
    return truth
