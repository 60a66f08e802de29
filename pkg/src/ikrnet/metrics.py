"""Classification metrics, accuracy-parity robustness, per-patient threshold
curves and heart-rate ROC / Youden thresholds."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import ROBUSTNESS_ZONES
from .errors import InvalidArgumentError, UndefinedROCError

THRESHOLD_GRID = tuple(round(0.5 + 0.01 * i, 2) for i in range(51))
UNINFORMATIVE_J = 0.1


@dataclass(frozen=True)
class Prediction:
    record_id: str
    patient_id: str
    zone: str
    fs: float
    y_true: int
    y_pred: int
    score: float
    average_bpm: float = float("nan")

    @property
    def correct(self) -> bool:
        return self.y_true == self.y_pred


class PredictionSet:
    def __init__(self, entries: Iterable[Prediction]):
        self.entries = list(entries)
        ids = [e.record_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise InvalidArgumentError("record ids in a prediction set must be unique")
        for e in self.entries:
            if not 0.0 <= e.score <= 1.0:
                raise InvalidArgumentError(f"score {e.score} of {e.record_id} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def subset(self, pred) -> "PredictionSet":
        return PredictionSet(e for e in self.entries if pred(e))

    def groups(self, key) -> dict:
        out: dict = {}
        for e in self.entries:
            out.setdefault(key(e), []).append(e)
        return out


def accuracy(entries: Sequence[Prediction]) -> float:
    if not entries:
        raise InvalidArgumentError("accuracy of an empty group")
    return sum(e.correct for e in entries) / len(entries)


@dataclass(frozen=True)
class BasicMetrics:
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None


def basic_metrics(preds: Iterable[Prediction]) -> BasicMetrics:
    """Positive class is Sot+ (label 1).  Undefined ratios come back as ``None``."""
    entries = list(preds)
    if not entries:
        raise InvalidArgumentError("basic_metrics needs at least one prediction")
    tp = sum(e.y_true == 1 and e.y_pred == 1 for e in entries)
    fp = sum(e.y_true == 0 and e.y_pred == 1 for e in entries)
    fn = sum(e.y_true == 1 and e.y_pred == 0 for e in entries)
    acc = sum(e.correct for e in entries) / len(entries)
    prec = tp / (tp + fp) if tp + fp else None
    rec = tp / (tp + fn) if tp + fn else None
    # harmonic mean of precision and recall, in count form (0 when tp == 0)
    f1 = 2 * tp / (2 * tp + fp + fn) if prec is not None and rec is not None else None
    return BasicMetrics(acc, prec, rec, f1)


def _group_key(grouping: str):
    if grouping == "zone":
        return lambda e: e.zone
    if grouping in ("sampling_rate", "rate"):
        return lambda e: float(e.fs)
    raise InvalidArgumentError(f"unknown grouping {grouping!r}")


def group_accuracies(preds: Iterable[Prediction], grouping: str) -> dict:
    entries = list(preds)
    key = _group_key(grouping)
    if grouping == "zone":
        entries = [e for e in entries if e.zone in ROBUSTNESS_ZONES]
    groups: dict = {}
    for e in entries:
        groups.setdefault(key(e), []).append(e)
    return {k: accuracy(v) for k, v in sorted(groups.items())}


def parity_difference(group_acc: Iterable[float]) -> float:
    vals = list(group_acc)
    if len(vals) < 2:
        raise InvalidArgumentError("accuracy parity needs at least two non-empty groups")
    return abs(max(vals) - min(vals))


def accuracy_parity_difference(preds: Iterable[Prediction], grouping: str = "zone") -> float:
    """|acc_max - acc_min| over protocol zones or sampling rates."""
    return parity_difference(group_accuracies(preds, grouping).values())


@dataclass
class APDSummary:
    mean: float
    std: float
    per_rate: dict = field(default_factory=dict)
    excluded_rates: list = field(default_factory=list)


def report_apd(preds: Iterable[Prediction]) -> APDSummary:
    """Zone-wise APD per sampling rate, summarized as mean and population std.

    A rate missing any zone present elsewhere is excluded and listed.
    """
    entries = [e for e in preds if e.zone in ROBUSTNESS_ZONES]
    zones = {e.zone for e in entries}
    rates = sorted({float(e.fs) for e in entries})
    if len(rates) < 2 or len(zones) < 2:
        raise InvalidArgumentError("report_apd needs predictions over >= 2 rates and >= 2 zones")
    per_rate = {}
    excluded = []
    for r in rates:
        sub = [e for e in entries if float(e.fs) == r]
        if {e.zone for e in sub} != zones:
            excluded.append(r)
            continue
        per_rate[r] = accuracy_parity_difference(sub, "zone")
    if not per_rate:
        raise InvalidArgumentError("no sampling rate covers every zone")
    vals = np.array(list(per_rate.values()))
    return APDSummary(float(vals.mean()), float(vals.std()), per_rate, excluded)


def per_patient_accuracy(preds: Iterable[Prediction]) -> dict[str, dict[str, float]]:
    """patient -> zone -> accuracy (zones limited to the robustness zones, plus 'all')."""
    out: dict[str, dict[str, float]] = {}
    table: dict[tuple[str, str], list[Prediction]] = {}
    for e in preds:
        table.setdefault((e.patient_id, "all"), []).append(e)
        if e.zone in ROBUSTNESS_ZONES:
            table.setdefault((e.patient_id, e.zone), []).append(e)
    for (pid, zone), ents in sorted(table.items()):
        out.setdefault(pid, {})[zone] = accuracy(ents)
    return out


def per_patient_threshold_curve(preds: Iterable[Prediction],
                                thresholds: Sequence[float] = THRESHOLD_GRID) -> dict[str, list[int]]:
    """For each zone and threshold tau, the number of patients whose zone
    accuracy is strictly above tau."""
    th = np.asarray(thresholds, dtype=np.float64)
    if np.any(th < 0) or np.any(th > 1):
        raise InvalidArgumentError("thresholds must lie in [0, 1]")
    table = per_patient_accuracy(preds)
    curves = {}
    for zone in ROBUSTNESS_ZONES:
        accs = np.array([z[zone] for z in table.values() if zone in z])
        curves[zone] = [int(np.sum(accs > t)) for t in th]
    return curves


# -- heart-rate ROC -------------------------------------------------------
@dataclass(frozen=True)
class ROCCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # first is +inf, last is -inf

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def roc_curve(misclassified: Sequence[bool], predictor: Sequence[float]) -> ROCCurve:
    """Sweep decision thresholds over the observed predictor values, highest first;
    an entry is flagged when ``predictor >= threshold``."""
    y = np.asarray(misclassified, dtype=bool)
    x = np.asarray(predictor, dtype=np.float64)
    if y.shape != x.shape:
        raise InvalidArgumentError("misclassified and predictor lengths differ")
    keep = np.isfinite(x)
    y, x = y[keep], x[keep]
    n_pos = int(y.sum())
    n_neg = int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedROCError("ROC needs both misclassified and correct entries")
    order = np.argsort(-x, kind="stable")
    xs, ys = x[order], y[order]
    tp = np.cumsum(ys)
    fp = np.cumsum(~ys)
    # last index of each distinct value
    last = np.flatnonzero(np.r_[xs[1:] != xs[:-1], True])
    tpr = np.r_[0.0, tp[last] / n_pos, 1.0]
    fpr = np.r_[0.0, fp[last] / n_neg, 1.0]
    thr = np.r_[np.inf, xs[last], -np.inf]
    return ROCCurve(fpr, tpr, thr)


def auc(roc: ROCCurve) -> float:
    return float(np.sum(np.diff(roc.fpr) * (roc.tpr[1:] + roc.tpr[:-1]) / 2.0))


@dataclass(frozen=True)
class YoudenResult:
    threshold: float
    youden_j: float
    informative: bool


def youden_ohr(roc: ROCCurve) -> YoudenResult:
    """Observed threshold maximizing tpr - fpr; ties go to the lowest threshold."""
    finite = np.isfinite(roc.thresholds)
    j = (roc.tpr - roc.fpr)[finite]
    thr = roc.thresholds[finite]
    best = j.max()
    idx = np.flatnonzero(j == best)
    pick = idx[np.argmin(thr[idx])]
    return YoudenResult(float(thr[pick]), float(best), bool(best >= UNINFORMATIVE_J))


def _ohr_inputs(entries: Sequence[Prediction]):
    return [not e.correct for e in entries], [e.average_bpm for e in entries]


def patient_ohr(preds: Iterable[Prediction]) -> tuple[dict[str, YoudenResult], list[str]]:
    """Per-patient OHR; patients whose ROC is undefined are returned separately."""
    by_patient: dict[str, list[Prediction]] = {}
    for e in preds:
        by_patient.setdefault(e.patient_id, []).append(e)
    out, excluded = {}, []
    for pid in sorted(by_patient):
        try:
            out[pid] = youden_ohr(roc_curve(*_ohr_inputs(by_patient[pid])))
        except UndefinedROCError:
            excluded.append(pid)
    return out, excluded


def error_rates_by_ohr(preds: Iterable[Prediction],
                       ohr: dict[str, float]) -> tuple[float | None, float | None]:
    """Misclassification rate pooled over records above / at-or-below their
    patient's OHR.  Records of patients without an OHR, or without a heart
    rate, are skipped."""
    above = [0, 0]
    below = [0, 0]
    for e in preds:
        if e.patient_id not in ohr or not math.isfinite(e.average_bpm):
            continue
        side = above if e.average_bpm > ohr[e.patient_id] else below
        side[0] += not e.correct
        side[1] += 1
    rate = lambda s: s[0] / s[1] if s[1] else None  # noqa: E731
    return rate(above), rate(below)


# -- report ---------------------------------------------------------------
@dataclass
class EvalReport:
    n_predictions: int
    overall: dict
    per_zone: dict
    zone_counts: dict
    per_rate: dict
    rate_counts: dict
    apd_zones: float | None
    apd_rates: float | None
    apd_zones_by_rate: dict
    per_patient: dict
    threshold_curve: dict
    ohr: dict
    error_rates: dict
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {(f"{k:g}" if isinstance(k, float) else str(k)): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def build_report(preds: PredictionSet) -> EvalReport:
    entries = list(preds)
    bm = basic_metrics(entries)
    zone_groups = {z: [e for e in entries if e.zone == z] for z in ROBUSTNESS_ZONES}
    zone_groups = {z: v for z, v in zone_groups.items() if v}
    rate_groups: dict[float, list[Prediction]] = {}
    for e in entries:
        rate_groups.setdefault(float(e.fs), []).append(e)
    diagnostics: dict = {}

    apd_z = parity_difference(accuracy(v) for v in zone_groups.values()) if len(zone_groups) >= 2 else None
    apd_r = (parity_difference(accuracy(v) for v in rate_groups.values())
             if len(rate_groups) >= 2 else None)
    try:
        summary = report_apd(entries)
        apd_by_rate = {"mean": summary.mean, "std": summary.std, "per_rate": summary.per_rate}
        diagnostics["apd_excluded_rates"] = summary.excluded_rates
    except InvalidArgumentError as exc:
        apd_by_rate = {"mean": None, "std": None, "per_rate": {}}
        diagnostics["apd_by_rate"] = str(exc)

    per_patient, excluded = patient_ohr(entries)
    ohr_map = {pid: r.threshold for pid, r in per_patient.items()}
    try:
        pooled = youden_ohr(roc_curve(*_ohr_inputs(entries)))
        pooled_d = asdict(pooled)
    except UndefinedROCError:
        pooled_d = None
        diagnostics["pooled_ohr"] = "undefined ROC (a single class of misclassification)"
    diagnostics["ohr_excluded_patients"] = excluded
    diagnostics["missing_heart_rate"] = sum(not math.isfinite(e.average_bpm) for e in entries)
    err_above, err_below = error_rates_by_ohr(entries, ohr_map)

    return EvalReport(
        n_predictions=len(entries),
        overall=asdict(bm),
        per_zone={z: accuracy(v) for z, v in zone_groups.items()},
        zone_counts={z: len(v) for z, v in zone_groups.items()},
        per_rate={r: accuracy(v) for r, v in sorted(rate_groups.items())},
        rate_counts={r: len(v) for r, v in sorted(rate_groups.items())},
        apd_zones=apd_z,
        apd_rates=apd_r,
        apd_zones_by_rate=apd_by_rate,
        per_patient=per_patient_accuracy(entries),
        threshold_curve={"thresholds": list(THRESHOLD_GRID),
                         **per_patient_threshold_curve(entries)},
        ohr={"pooled": pooled_d,
             "per_patient": {pid: asdict(r) for pid, r in per_patient.items()}},
        error_rates={"above_ohr": err_above, "below_ohr": err_below},
        diagnostics=diagnostics,
    )


# -- CSV exports (fixed column order) --------------------------------------
def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def zone_table_csv(report: EvalReport) -> str:
    zones = [z for z in ROBUSTNESS_ZONES if z in report.per_zone]
    rows = [(z, report.zone_counts[z], f"{report.per_zone[z]:.6f}") for z in zones]
    return _csv(rows, ("zone", "n", "accuracy"))


def rate_table_csv(report: EvalReport) -> str:
    rows = [(f"{float(k):g}", report.rate_counts[k], f"{v:.6f}")
            for k, v in sorted(report.per_rate.items(), key=lambda kv: float(kv[0]))]
    return _csv(rows, ("sampling_rate_hz", "n", "accuracy"))


def threshold_curve_csv(report: EvalReport) -> str:
    curve = report.threshold_curve
    zones = [z for z in ROBUSTNESS_ZONES if z in curve]
    rows = [(f"{t:.2f}", *(curve[z][i] for z in zones)) for i, t in enumerate(curve["thresholds"])]
    return _csv(rows, ("threshold", *zones))
