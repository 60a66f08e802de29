"""Single-lead ECG signals: sampling, spline resampling, standardization,
R-peak heart-rate estimation, and the on-disk record format."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DegenerateSignalError, InsufficientBeatsError, InvalidArgumentError

SOT_MINUS = "Sot-"
SOT_PLUS = "Sot+"
LABELS = (SOT_MINUS, SOT_PLUS)

Waveform = Callable[[np.ndarray], np.ndarray]


def _floor_len(duration_s: float, fs: float) -> int:
    # guards against 2150/215*500 = 4999.999...
    return int(math.floor(duration_s * fs + 1e-9))


@dataclass(frozen=True)
class GaussianWave:
    """Sum of Gaussian bumps ``a * exp(-(t - c)^2 / (2 w^2))`` in absolute time."""

    centers: tuple[float, ...]
    amplitudes: tuple[float, ...]
    widths: tuple[float, ...]

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        for c, a, w in zip(self.centers, self.amplitudes, self.widths):
            out += a * np.exp(-0.5 * ((t - c) / w) ** 2)
        return out


@dataclass(frozen=True)
class Beat:
    onset: float
    offset: float
    waveform: Waveform
    r_time: float | None = None


@dataclass(frozen=True)
class ContinuousBeatModel:
    """Piecewise signal: on ``[beat.onset, beat.offset)`` only that beat's
    waveform is evaluated.  The final beat also owns its right end point."""

    beats: tuple[Beat, ...]

    def __post_init__(self):
        if not self.beats:
            raise InvalidArgumentError("a beat model needs at least one beat")
        for a, b in zip(self.beats, self.beats[1:]):
            if a.offset != b.onset:
                raise InvalidArgumentError("beat intervals must be contiguous")
        if any(b.offset <= b.onset for b in self.beats):
            raise InvalidArgumentError("beat boundaries must be strictly increasing")

    @property
    def t0(self) -> float:
        return self.beats[0].onset

    @property
    def t_end(self) -> float:
        return self.beats[-1].offset

    @property
    def boundaries(self) -> np.ndarray:
        return np.array([self.t0] + [b.offset for b in self.beats])

    def beat_index(self, t: np.ndarray) -> np.ndarray:
        offsets = np.array([b.offset for b in self.beats])
        idx = np.searchsorted(offsets, t, side="right")
        return np.minimum(idx, len(self.beats) - 1)

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if np.any(t < self.t0) or np.any(t > self.t_end):
            raise InvalidArgumentError("evaluation outside the model support")
        idx = self.beat_index(t)
        out = np.empty_like(t)
        for i in np.unique(idx):
            sel = idx == i
            out[sel] = self.beats[i].waveform(t[sel])
        return out


@dataclass(frozen=True, eq=False)
class EcgRecord:
    samples: np.ndarray
    fs: float
    patient_id: str = ""
    label: str | None = None
    zone: str | None = None
    source_fs: float | None = None
    record_id: str = ""
    beat_onsets_s: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidArgumentError("samples must be a non-empty 1-D vector")
        if not self.fs > 0:
            raise InvalidArgumentError(f"fs must be positive, got {self.fs}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        if self.source_fs is None:
            object.__setattr__(self, "source_fs", float(self.fs))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs

    def with_samples(self, samples: np.ndarray, **changes) -> "EcgRecord":
        return replace(self, samples=samples, **changes)


@dataclass(frozen=True)
class HeartRateSeries:
    peak_indices: np.ndarray
    instantaneous_bpm: np.ndarray
    average_bpm: float


def sample(model: ContinuousBeatModel, fs: float, **record_fields) -> EcgRecord:
    """Point-evaluate ``model`` on the uniform grid ``t0 + n/fs``, n < floor(duration*fs)."""
    if not fs > 0:
        raise InvalidArgumentError(f"fs must be positive, got {fs}")
    n = _floor_len(model.t_end - model.t0, fs)
    if n < 1:
        raise InvalidArgumentError("model shorter than one sampling period")
    t = model.t0 + np.arange(n) / fs
    onsets = tuple(float(b.onset) for b in model.beats)
    record_fields.setdefault("beat_onsets_s", onsets)
    return EcgRecord(samples=model(t), fs=float(fs), **record_fields)


def check_nyquist(model_fmax: float, fs: float) -> bool:
    return fs >= 2 * model_fmax


def resample(record: EcgRecord, target_fs: float) -> EcgRecord:
    """Natural cubic spline through the samples, evaluated on a new uniform grid
    over the same duration.  Evaluation is clamped to the sampled span."""
    if not target_fs > 0:
        raise InvalidArgumentError(f"target_fs must be positive, got {target_fs}")
    n = len(record)
    if n < 4:
        raise InvalidArgumentError("cubic spline resampling needs at least 4 samples")
    t_old = np.arange(n) / record.fs
    n_new = _floor_len(record.duration, target_fs)
    if n_new < 1:
        raise InvalidArgumentError("target rate yields an empty record")
    t_new = np.clip(np.arange(n_new) / target_fs, t_old[0], t_old[-1])
    spline = CubicSpline(t_old, record.samples, bc_type="natural")
    return record.with_samples(spline(t_new), fs=float(target_fs))


def resample_roundtrip(record: EcgRecord, via_fs: float) -> EcgRecord:
    """Down/up-sample through ``via_fs`` and back; ``source_fs`` becomes ``via_fs``."""
    back = resample(resample(record, via_fs), record.fs)
    return replace(back, source_fs=float(via_fs))


def standardize(record: EcgRecord) -> EcgRecord:
    x = record.samples
    mu = x.mean()
    sd = x.std()
    if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, abs(mu)):
        raise DegenerateSignalError("cannot standardize a zero-variance signal")
    return record.with_samples((x - mu) / sd)


def standardize_array(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    if sd <= 0:
        raise DegenerateSignalError("cannot standardize a zero-variance signal")
    return (x - x.mean()) / sd


def estimate_heart_rate(record: EcgRecord,
                        beat_windows: Sequence[tuple[int, int]]) -> HeartRateSeries:
    """R peak = earliest argmax of |x| inside each half-open window;
    HR between consecutive peaks = 60 fs / (n_{i+1} - n_i)."""
    if len(beat_windows) < 2:
        raise InsufficientBeatsError("heart rate needs at least two beat windows")
    x = np.abs(record.samples)
    prev_stop = 0
    peaks = []
    for start, stop in beat_windows:
        if start < prev_stop or stop <= start or stop > x.size:
            raise InvalidArgumentError(f"beat window ({start}, {stop}) is not ordered/disjoint/inside")
        peaks.append(start + int(np.argmax(x[start:stop])))
        prev_stop = stop
    peaks_arr = np.asarray(peaks, dtype=np.int64)
    inst = 60.0 * record.fs / np.diff(peaks_arr)
    return HeartRateSeries(peaks_arr, inst, float(inst.mean()))


def detect_beat_windows(record: EcgRecord, refractory_s: float = 0.2,
                        threshold: float = 0.5) -> list[tuple[int, int]]:
    """Amplitude-threshold R-peak finder with a refractory period.

    Works on the standardized, median-centred signal.  Candidates are local
    maxima of |x| above ``threshold * max|x|``; within ``refractory_s`` only
    the tallest survives.  Windows split the record at midpoints between
    consecutive peaks.
    """
    x = record.samples
    if np.ptp(x) == 0:
        return []
    z = np.abs(standardize_array(x - np.median(x)))
    level = threshold * z.max()
    above = z >= level
    # local maxima (plateaus resolved to their first sample)
    left = np.concatenate(([True], z[1:] > z[:-1]))
    right = np.concatenate((z[:-1] >= z[1:], [True]))
    cand = np.flatnonzero(above & left & right)
    if cand.size == 0:
        return []
    gap = max(1, int(round(refractory_s * record.fs)))
    peaks: list[int] = []
    for c in cand:
        if peaks and c - peaks[-1] < gap:
            if z[c] > z[peaks[-1]]:
                peaks[-1] = int(c)
            continue
        peaks.append(int(c))
    bounds = [0] + [(a + b + 1) // 2 for a, b in zip(peaks, peaks[1:])] + [x.size]
    return [(bounds[i], bounds[i + 1]) for i in range(len(peaks))]


def average_heart_rate(record: EcgRecord) -> float:
    """Detector + estimator; NaN when fewer than two beats are found."""
    windows = detect_beat_windows(record)
    if len(windows) < 2:
        return float("nan")
    return estimate_heart_rate(record, windows).average_bpm


# -- files ----------------------------------------------------------------
SIDECAR_KEYS = ("record_id", "patient_id", "fs", "source_fs", "label", "zone", "beat_onsets_s")


def sidecar_dict(record: EcgRecord) -> dict:
    d = {
        "record_id": record.record_id,
        "patient_id": record.patient_id,
        "fs": record.fs,
        "source_fs": record.source_fs,
        "label": record.label,
        "zone": record.zone,
        "beat_onsets_s": list(record.beat_onsets_s),
    }
    if record.meta:
        d["meta"] = record.meta
    return d


def write_record(record: EcgRecord, csv_path: str | Path) -> Path:
    """Write ``<name>.csv`` (header ``n,amplitude``) and its ``<name>.json`` sidecar."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    body = "\n".join(f"{i},{v!r}" for i, v in enumerate(record.samples.tolist()))
    csv_path.write_text("n,amplitude\n" + body + "\n")
    csv_path.with_suffix(".json").write_text(json.dumps(sidecar_dict(record), indent=1) + "\n")
    return csv_path


def read_record(csv_path: str | Path) -> EcgRecord:
    csv_path = Path(csv_path)
    with open(csv_path) as fh:
        header = fh.readline().strip()
        if header != "n,amplitude":
            raise InvalidArgumentError(f"{csv_path}: unexpected header {header!r}")
        samples = np.loadtxt(fh, delimiter=",", usecols=1, dtype=np.float64, ndmin=1)
    side = json.loads(csv_path.with_suffix(".json").read_text())
    return EcgRecord(
        samples=samples,
        fs=side["fs"],
        patient_id=side["patient_id"],
        label=side["label"],
        zone=side["zone"],
        source_fs=side["source_fs"],
        record_id=side["record_id"],
        beat_onsets_s=tuple(side["beat_onsets_s"]),
        meta=side.get("meta", {}),
    )
