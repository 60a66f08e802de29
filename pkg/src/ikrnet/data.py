"""Synthetic drug-footprint Holter dataset, partitioning, class balancing
and sampling-rate augmentation."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataIntegrityError, InvalidArgumentError
from .signal import (
    SOT_MINUS,
    SOT_PLUS,
    Beat,
    ContinuousBeatModel,
    EcgRecord,
    GaussianWave,
    read_record,
    resample_roundtrip,
    sample,
    write_record,
)

PARTITIONS = ("train", "val", "eval", "holdout")
DEFAULT_RATIOS = (0.70, 0.10, 0.10, 0.10)
TRAIN_RATES = (180.0, 250.0)
HOLDOUT_RATES = (150.0, 180.0, 215.0, 250.0, 300.0, 350.0, 425.0, 500.0)
RECORD_SECONDS = 10.0


class ProtocolZone(str, enum.Enum):
    BASELINE = "Baseline"
    ST_MINUS_DG_PLUS = "St-Dg+"
    ST_PLUS_DG_PLUS = "St+Dg+"
    UNASSIGNED = "Unassigned"


ROBUSTNESS_ZONES = (ProtocolZone.BASELINE.value, ProtocolZone.ST_MINUS_DG_PLUS.value,
                    ProtocolZone.ST_PLUS_DG_PLUS.value)


@dataclass(frozen=True)
class ProtocolTimeline:
    """Minutes relative to drug intake (intake at 0)."""

    start: float
    end: float
    stress_windows: tuple[tuple[float, float], ...]
    st_plus_window: float = 30.0
    intake: float = 0.0


def assign_zone(record_time: float, timeline: ProtocolTimeline) -> ProtocolZone:
    t = record_time
    first_stress = timeline.stress_windows[0][0] if timeline.stress_windows else timeline.intake
    if timeline.start <= t < min(first_stress, timeline.intake):
        return ProtocolZone.BASELINE
    if timeline.intake + 120.0 <= t < timeline.intake + 180.0:
        return ProtocolZone.ST_MINUS_DG_PLUS
    post = [w for w in timeline.stress_windows if w[0] >= timeline.intake]
    if post:
        end = post[0][1]
        if end <= t < end + timeline.st_plus_window:
            return ProtocolZone.ST_PLUS_DG_PLUS
    return ProtocolZone.UNASSIGNED


# -- generator spec -------------------------------------------------------
@dataclass(frozen=True)
class DrugEffect:
    qt_prolongation_ms: float = 60.0
    hr_reduction_bpm: float = 10.0
    onset_tau_min: float = 30.0
    decay_tau_min: float = 120.0
    plateau_end_hours: float = 5.0

    def level(self, t_min: float) -> float:
        """Effect fraction in [0, 1] at ``t_min`` minutes after intake."""
        if t_min < 0:
            return 0.0
        lvl = 1.0 - math.exp(-t_min / self.onset_tau_min)
        plateau = 60.0 * self.plateau_end_hours
        if t_min > plateau:
            lvl *= math.exp(-(t_min - plateau) / self.decay_tau_min)
        return lvl


@dataclass(frozen=True)
class SyntheticProtocolSpec:
    n_patients: int = 20
    baseline_minutes: float = 60.0
    post_drug_hours: float = 5.0
    record_interval_minutes: float = 5.0
    stress_windows: tuple[tuple[float, float], ...] = ((-20.0, -10.0), (180.0, 190.0))
    stress_hr_delta_bpm: float = 35.0
    stress_recovery_min: float = 15.0
    st_plus_window_min: float = 30.0
    drug_effect: DrugEffect = field(default_factory=DrugEffect)
    hr_baseline_bpm: tuple[float, float] = (68.0, 6.0)  # mean, sd across patients
    qtc_ms: tuple[float, float] = (400.0, 15.0)
    hrv_fraction: float = 0.03
    hr_drift_bpm: float = 2.0
    noise_sigma: float = 0.03
    fs: float = 500.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stress_windows",
                           tuple((float(a), float(b)) for a, b in self.stress_windows))
        if isinstance(self.drug_effect, dict):
            object.__setattr__(self, "drug_effect", DrugEffect(**self.drug_effect))
        object.__setattr__(self, "hr_baseline_bpm", tuple(self.hr_baseline_bpm))
        object.__setattr__(self, "qtc_ms", tuple(self.qtc_ms))
        self.validate()

    def validate(self) -> None:
        if self.n_patients < 1:
            raise ConfigError("n_patients must be >= 1")
        for name in ("baseline_minutes", "post_drug_hours", "record_interval_minutes",
                     "st_plus_window_min", "stress_recovery_min", "fs"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        d = self.drug_effect
        if d.qt_prolongation_ms < 0:
            raise ConfigError("qt_prolongation_ms must be >= 0")
        if not (d.onset_tau_min > 0 and d.decay_tau_min > 0 and d.plateau_end_hours > 0):
            raise ConfigError("drug effect time constants must be positive")
        for a, b in self.stress_windows:
            if not a < b:
                raise ConfigError(f"stress window ({a}, {b}) is empty")
        if any(w1[1] > w2[0] for w1, w2 in zip(self.stress_windows, self.stress_windows[1:])):
            raise ConfigError("stress windows must be ordered and disjoint")
        if self.noise_sigma < 0 or self.hrv_fraction < 0:
            raise ConfigError("noise_sigma and hrv_fraction must be >= 0")

    @property
    def timeline(self) -> ProtocolTimeline:
        return ProtocolTimeline(start=-self.baseline_minutes, end=60.0 * self.post_drug_hours,
                                stress_windows=self.stress_windows,
                                st_plus_window=self.st_plus_window_min)

    def record_times(self) -> np.ndarray:
        tl = self.timeline
        n = int(math.floor((tl.end - tl.start) / self.record_interval_minutes + 1e-9))
        return tl.start + self.record_interval_minutes * np.arange(n)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stress_windows"] = [list(w) for w in self.stress_windows]
        d["hr_baseline_bpm"] = list(self.hr_baseline_bpm)
        d["qtc_ms"] = list(self.qtc_ms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticProtocolSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator spec keys: {sorted(unknown)}")
        d = dict(d)
        if "drug_effect" in d:
            de = d["drug_effect"]
            dk = {f.name for f in fields(DrugEffect)}
            if not isinstance(de, dict) or set(de) - dk:
                raise ConfigError(f"invalid drug_effect: {de!r}")
            d["drug_effect"] = DrugEffect(**de)
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class PatientProfile:
    patient_id: str
    hr0: float
    qtc_s: float
    amp: tuple[float, ...]     # P, Q, R, S, T
    width: tuple[float, ...]
    gain: float
    drift_phase: float


_BASE_AMP = (0.12, -0.08, 1.2, -0.25, 0.32)
_BASE_WIDTH = (0.022, 0.008, 0.010, 0.010, 0.035)


def _patient_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def patient_profile(spec: SyntheticProtocolSpec, index: int,
                    rng: np.random.Generator) -> PatientProfile:
    m, s = spec.hr_baseline_bpm
    qm, qs = spec.qtc_ms
    return PatientProfile(
        patient_id=f"P{index:04d}",
        hr0=float(np.clip(rng.normal(m, s), 45.0, 95.0)),
        qtc_s=float(np.clip(rng.normal(qm, qs), 340.0, 460.0)) / 1000.0,
        amp=tuple(float(a * rng.uniform(0.8, 1.2)) for a in _BASE_AMP),
        width=tuple(float(w * rng.uniform(0.9, 1.1)) for w in _BASE_WIDTH),
        gain=float(rng.uniform(0.6, 1.6)),
        drift_phase=float(rng.uniform(0, 2 * math.pi)),
    )


def stress_level(spec: SyntheticProtocolSpec, t_min: float) -> float:
    """1 inside a stress window, exponential recovery after it."""
    lvl = 0.0
    for a, b in spec.stress_windows:
        if a <= t_min < b:
            return 1.0
        if t_min >= b:
            lvl = max(lvl, math.exp(-(t_min - b) / spec.stress_recovery_min))
    return lvl


def target_heart_rate(spec: SyntheticProtocolSpec, prof: PatientProfile, t_min: float) -> float:
    drift = spec.hr_drift_bpm * math.sin(2 * math.pi * t_min / 60.0 + prof.drift_phase)
    return (prof.hr0 - spec.drug_effect.hr_reduction_bpm * spec.drug_effect.level(t_min)
            + spec.stress_hr_delta_bpm * stress_level(spec, t_min) + drift)


def beat_model(prof: PatientProfile, r_times: np.ndarray, qt_s: np.ndarray, rr_s: np.ndarray,
               duration: float = RECORD_SECONDS) -> ContinuousBeatModel:
    """Piecewise P-QRS-T model; beat boundaries sit midway between a T wave
    and the following P wave."""
    a, w = prof.amp, prof.width
    waves, t_centres, p_centres = [], [], []
    for r, qt, rr in zip(r_times, qt_s, rr_s):
        pr = min(0.16, 0.28 * rr)
        t_c = r + qt - 0.09
        centers = (r - pr, r - 0.025, r, r + 0.025, t_c)
        amps = tuple(prof.gain * v for v in a)
        waves.append(GaussianWave(centers, amps, w))
        t_centres.append(t_c)
        p_centres.append(r - pr)
    cuts = [0.0]
    for i in range(len(waves) - 1):
        cut = 0.5 * (t_centres[i] + p_centres[i + 1])
        cuts.append(float(min(max(cut, r_times[i] + 0.05), r_times[i + 1] - 0.05)))
    cuts.append(duration)
    beats = tuple(Beat(cuts[i], cuts[i + 1], waves[i], float(r_times[i])) for i in range(len(waves)))
    return ContinuousBeatModel(beats)


def synth_record(prof: PatientProfile, hr_bpm: float, rng: np.random.Generator, *,
                 qt_extra_ms: float = 0.0, hrv_fraction: float = 0.03,
                 noise_sigma: float = 0.03, fs: float = 500.0,
                 duration: float = RECORD_SECONDS, **record_fields) -> EcgRecord:
    """One record at a nominal heart rate; ground truth goes to ``meta``."""
    rr = []
    r_times = []
    r = None
    while True:
        hr_beat = hr_bpm * (1.0 + hrv_fraction * rng.standard_normal())
        interval = 60.0 / max(hr_beat, 20.0)
        r = 0.05 + rng.uniform(0.0, interval) if r is None else r + interval
        if r > duration - 0.05:
            break
        rr.append(interval)
        r_times.append(r)
    r_arr = np.asarray(r_times)
    rr_arr = np.asarray(rr)
    qt = prof.qtc_s * np.sqrt(rr_arr) + qt_extra_ms / 1000.0
    model = beat_model(prof, r_arr, qt, rr_arr, duration)
    rec = sample(model, fs, patient_id=prof.patient_id, **record_fields)
    noisy = rec.samples + noise_sigma * rng.standard_normal(len(rec))
    gt_rr = np.diff(r_arr)
    meta = dict(rec.meta)
    meta.update({
        "r_peak_times_s": r_arr.tolist(),
        "rr_intervals_s": gt_rr.tolist(),
        "qt_ms": (1000.0 * qt).tolist(),
        "qt_drug_ms": float(qt_extra_ms),
        "target_hr_bpm": float(hr_bpm),
        "gt_average_bpm": float(np.mean(60.0 / gt_rr)) if gt_rr.size else float("nan"),
        "n_beats": int(r_arr.size),
    })
    return rec.with_samples(noisy, meta=meta)


def generate_patient(spec: SyntheticProtocolSpec, index: int) -> list[EcgRecord]:
    rng = _patient_rng(spec.seed, index)
    prof = patient_profile(spec, index, rng)
    tl = spec.timeline
    out = []
    for j, t in enumerate(spec.record_times()):
        t = float(t)
        label = SOT_PLUS if t >= tl.intake else SOT_MINUS
        eff = spec.drug_effect.level(t)
        rec = synth_record(
            prof, target_heart_rate(spec, prof, t), rng,
            qt_extra_ms=spec.drug_effect.qt_prolongation_ms * eff,
            hrv_fraction=spec.hrv_fraction, noise_sigma=spec.noise_sigma, fs=spec.fs,
            label=label, zone=assign_zone(t, tl).value,
            record_id=f"{prof.patient_id}_r{j:03d}",
        )
        meta = dict(rec.meta)
        meta.update({"time_min": t, "drug_effect": eff, "stress": stress_level(spec, t),
                     "patient_hr0_bpm": prof.hr0, "patient_qtc_ms": 1000.0 * prof.qtc_s})
        out.append(replace(rec, meta=meta))
    return out


# -- manifest -------------------------------------------------------------
@dataclass
class ManifestEntry:
    record_id: str
    path: str
    patient_id: str
    label: str
    zone: str
    fs: float
    source_fs: float
    partition: str | None = None
    time_min: float | None = None
    base_record_id: str | None = None  # set on augmented copies

    @property
    def is_augmented(self) -> bool:
        return self.base_record_id is not None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    ratios: tuple[float, ...] | None = None
    seed: int | None = None
    augmentation: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def by_partition(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.partition == name]

    def patients(self, partition: str | None = None) -> list[str]:
        return sorted({e.patient_id for e in self.entries
                       if partition is None or e.partition == partition})

    def check_patient_disjoint(self) -> None:
        owner: dict[str, str] = {}
        for e in self.entries:
            if e.partition is None:
                continue
            prev = owner.setdefault(e.patient_id, e.partition)
            if prev != e.partition:
                raise DataIntegrityError(f"patient {e.patient_id} in {prev} and {e.partition}")

    def to_dict(self) -> dict:
        return {
            "ratios": list(self.ratios) if self.ratios is not None else None,
            "seed": self.seed,
            "augmentation": self.augmentation,
            "flags": self.flags,
            "records": [asdict(e) for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            entries = [ManifestEntry(**e) for e in d["records"]]
        except (KeyError, TypeError) as exc:
            raise DataIntegrityError(f"malformed manifest: {exc}") from exc
        ratios = tuple(d["ratios"]) if d.get("ratios") is not None else None
        return cls(entries, ratios, d.get("seed"), d.get("augmentation", {}), d.get("flags", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise DataIntegrityError(f"{path}: {exc}") from exc


def record_path(rec: EcgRecord) -> str:
    return f"records/{rec.patient_id}/{rec.record_id}.csv"


def entry_for(rec: EcgRecord) -> ManifestEntry:
    return ManifestEntry(record_id=rec.record_id, path=record_path(rec), patient_id=rec.patient_id,
                         label=rec.label, zone=rec.zone or ProtocolZone.UNASSIGNED.value,
                         fs=rec.fs, source_fs=rec.source_fs, time_min=rec.meta.get("time_min"))


def generate(spec: SyntheticProtocolSpec, workers: int = 1) -> tuple[list[EcgRecord], DatasetManifest]:
    """Deterministic in ``spec.seed``; each patient draws from its own seeded stream."""
    spec.validate()
    idx = range(spec.n_patients)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            per_patient = list(pool.map(lambda i: generate_patient(spec, i), idx))
    else:
        per_patient = [generate_patient(spec, i) for i in idx]
    records = [r for recs in per_patient for r in recs]
    manifest = DatasetManifest([entry_for(r) for r in records], seed=spec.seed)
    return records, manifest


# -- partitioning ---------------------------------------------------------
def split_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment with at least one patient per partition."""
    quotas = [r * n for r in ratios]
    counts = [int(math.floor(q + 1e-9)) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i in range(len(counts)):
        if counts[i] == 0 and ratios[i] > 0:
            j = max(range(len(counts)), key=lambda c: counts[c])
            counts[j] -= 1
            counts[i] += 1
    return counts


def partition(records: Iterable[EcgRecord] | DatasetManifest,
              ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> DatasetManifest:
    if len(ratios) != len(PARTITIONS):
        raise InvalidArgumentError(f"need {len(PARTITIONS)} ratios")
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise InvalidArgumentError(f"ratios must be non-negative and sum to 1, got {ratios}")
    if isinstance(records, DatasetManifest):
        entries = [replace(e) for e in records.entries]
        base = records
    else:
        entries = [entry_for(r) for r in records]
        base = DatasetManifest(entries)
    patients = sorted({e.patient_id for e in entries})
    n_parts = sum(1 for r in ratios if r > 0)
    if len(patients) < n_parts:
        raise InvalidArgumentError(f"{len(patients)} patients cannot fill {n_parts} partitions")
    order = np.random.default_rng(seed).permutation(len(patients))
    counts = split_counts(len(patients), ratios)
    owner = {}
    pos = 0
    for name, c in zip(PARTITIONS, counts):
        for k in order[pos:pos + c]:
            owner[patients[k]] = name
        pos += c
    for e in entries:
        e.partition = owner[e.patient_id]
    return DatasetManifest(entries, tuple(ratios), seed, dict(base.augmentation), dict(base.flags))


# -- class balancing ------------------------------------------------------
def _stratified_pick(groups: dict[int, list[int]], k: int, rng: np.random.Generator) -> list[int]:
    """Choose ``k`` items spread as evenly as possible over ``groups``."""
    keys = sorted(groups)
    alloc = {h: 0 for h in keys}
    remaining = k
    while remaining > 0:
        open_keys = [h for h in keys if alloc[h] < len(groups[h])]
        if not open_keys:
            break
        share = remaining // len(open_keys)
        if share == 0:
            for h in rng.permutation(open_keys)[:remaining]:
                alloc[int(h)] += 1
            break
        for h in open_keys:
            add = min(share, len(groups[h]) - alloc[h])
            alloc[h] += add
            remaining -= add
    picked = []
    for h in keys:
        members = groups[h]
        picked.extend(members[i] for i in rng.choice(len(members), alloc[h], replace=False))
    return picked


def balance_training(manifest: DatasetManifest, seed: int = 0,
                     partitions: Sequence[str] = ("train",)) -> DatasetManifest:
    """Per patient, subsample the larger class down to the smaller one.

    Sot+ records are drawn evenly across post-intake hours.  Augmented
    copies follow their base record.
    """
    targets = [e for e in manifest.entries if e.partition in partitions]
    if not targets:
        raise InvalidArgumentError(f"no records in partitions {tuple(partitions)}")
    rng = np.random.default_rng(seed)
    keep: set[str] = set()
    unbalanced = []
    by_patient: dict[str, list[ManifestEntry]] = {}
    for e in targets:
        if not e.is_augmented:
            by_patient.setdefault(e.patient_id, []).append(e)
    for pid in sorted(by_patient):
        ents = by_patient[pid]
        minus = [e for e in ents if e.label == SOT_MINUS]
        plus = [e for e in ents if e.label == SOT_PLUS]
        if not minus or not plus:
            unbalanced.append(pid)
            keep.update(e.record_id for e in ents)
            continue
        if len(plus) > len(minus):
            groups: dict[int, list[int]] = {}
            for i, e in enumerate(plus):
                hour = int(math.floor((e.time_min or 0.0) / 60.0))
                groups.setdefault(hour, []).append(i)
            chosen = [plus[i] for i in _stratified_pick(groups, len(minus), rng)]
            keep.update(e.record_id for e in minus + chosen)
        elif len(minus) > len(plus):
            chosen = [minus[i] for i in sorted(rng.choice(len(minus), len(plus), replace=False))]
            keep.update(e.record_id for e in plus + chosen)
        else:
            keep.update(e.record_id for e in ents)
    entries = [e for e in manifest.entries
               if e.partition not in partitions
               or (e.base_record_id or e.record_id) in keep]
    flags = dict(manifest.flags)
    if unbalanced:
        flags["unbalanced_patients"] = sorted(set(flags.get("unbalanced_patients", [])) | set(unbalanced))
    return DatasetManifest(entries, manifest.ratios, manifest.seed, dict(manifest.augmentation), flags)


# -- sampling-rate augmentation -------------------------------------------
def augment_sampling_rates(manifest: DatasetManifest,
                           train_rates: Sequence[float] = TRAIN_RATES,
                           holdout_rates: Sequence[float] = HOLDOUT_RATES) -> DatasetManifest:
    """Add down/up-sampled variants.  train/val/eval get ``train_rates``,
    holdout gets ``holdout_rates``; an original at rate ``fs`` stands in for
    that rate.  Re-running adds nothing new."""
    base = [e for e in manifest.entries if not e.is_augmented]
    for e in base:
        rates = holdout_rates if e.partition == "holdout" else train_rates
        bad = [r for r in rates if r > e.fs]
        if bad:
            raise InvalidArgumentError(f"rates {bad} exceed the original rate {e.fs} of {e.record_id}")
    existing = {(e.base_record_id, e.source_fs) for e in manifest.entries if e.is_augmented}
    entries = list(manifest.entries)
    for e in base:
        if e.partition is None:
            continue
        rates = holdout_rates if e.partition == "holdout" else train_rates
        for r in rates:
            r = float(r)
            if r == e.fs or (e.record_id, r) in existing:
                continue
            entries.append(replace(e, record_id=f"{e.record_id}@{r:g}", source_fs=r,
                                   base_record_id=e.record_id))
            existing.add((e.record_id, r))
    aug = dict(manifest.augmentation)
    aug.update({"train_rates": [float(r) for r in train_rates],
                "holdout_rates": [float(r) for r in holdout_rates],
                "method": "natural cubic spline down/up-sampling"})
    return DatasetManifest(entries, manifest.ratios, manifest.seed, aug, dict(manifest.flags))


def materialize(entry: ManifestEntry, originals: dict[str, EcgRecord]) -> EcgRecord:
    """Return the signal for ``entry``: the original record or its resampled variant."""
    base_id = entry.base_record_id or entry.record_id
    try:
        rec = originals[base_id]
    except KeyError as exc:
        raise DataIntegrityError(f"record {base_id} missing") from exc
    if entry.source_fs != rec.fs:
        rec = replace(resample_roundtrip(rec, entry.source_fs), record_id=entry.record_id)
    return rec


def write_dataset(records: Sequence[EcgRecord], manifest: DatasetManifest, root: str | Path) -> Path:
    root = Path(root)
    for rec in records:
        write_record(rec, root / record_path(rec))
    path = root / "manifest.json"
    manifest.save(path)
    return path


def load_originals(manifest: DatasetManifest, root: str | Path) -> dict[str, EcgRecord]:
    root = Path(root)
    out = {}
    for e in manifest.entries:
        if e.is_augmented or e.record_id in out:
            continue
        p = root / e.path
        if not p.exists():
            raise DataIntegrityError(f"missing record file {p}")
        rec = read_record(p)
        if rec.record_id != e.record_id:
            raise DataIntegrityError(f"{p}: sidecar id {rec.record_id} != manifest id {e.record_id}")
        out[e.record_id] = rec
    return out
