import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ikrnet.errors import InvalidArgumentError, UndefinedROCError
from ikrnet.metrics import (
    THRESHOLD_GRID,
    BasicMetrics,
    EvalReport,
    Prediction,
    PredictionSet,
    accuracy_parity_difference,
    auc,
    basic_metrics,
    build_report,
    error_rates_by_ohr,
    parity_difference,
    patient_ohr,
    per_patient_threshold_curve,
    rate_table_csv,
    report_apd,
    roc_curve,
    threshold_curve_csv,
    youden_ohr,
    zone_table_csv,
)
from oracles import (
    brute_apd,
    brute_basic,
    brute_error_rates,
    brute_report_apd,
    brute_roc,
    brute_threshold_curve,
    brute_youden,
    random_prediction_set,
)

N_SETS = 150


def P(i, y, yhat, zone="Baseline", fs=500.0, pid="P0", bpm=60.0, score=None):
    return Prediction(f"r{i}", pid, zone, fs, y, yhat, score if score is not None else float(yhat), bpm)


# -- basic metrics --------------------------------------------------------
def test_basic_examples():
    assert basic_metrics([P(0, 1, 1), P(1, 0, 0)]) == BasicMetrics(1.0, 1.0, 1.0, 1.0)
    preds = ([P(i, 1, 1) for i in range(3)] + [P(3, 0, 1), P(4, 1, 0)] + [P(5 + i, 0, 0) for i in range(5)])
    m = basic_metrics(preds)
    assert (m.accuracy, m.precision, m.recall, m.f1) == pytest.approx((0.8, 0.75, 0.75, 0.75))
    neg = basic_metrics([P(0, 1, 0), P(1, 0, 0)])
    assert neg.precision is None and neg.recall == 0.0 and neg.f1 is None


def test_basic_matches_confusion_counter():
    for seed in range(N_SETS):
        ps = list(random_prediction_set(seed))
        m = basic_metrics(ps)
        assert (m.accuracy, m.precision, m.recall, m.f1) == brute_basic(ps)


def test_f1_zero_when_nothing_right():
    m = basic_metrics([P(0, 1, 0), P(1, 0, 1)])
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)


# -- APD ------------------------------------------------------------------
def test_apd_examples():
    assert parity_difference([0.9222, 0.9892, 0.9535]) == pytest.approx(0.0670, abs=1e-12)
    assert parity_difference([0.8, 0.8, 0.8]) == 0
    assert parity_difference([1.0, 0.0]) == 1.0
    with pytest.raises(InvalidArgumentError):
        parity_difference([0.5])


@pytest.mark.parametrize("grouping", ["zone", "sampling_rate"])
def test_apd_matches_brute_force(grouping):
    checked = 0
    for seed in range(N_SETS):
        ps = list(random_prediction_set(seed))
        want = brute_apd(ps, grouping)
        if want is None:
            with pytest.raises(InvalidArgumentError):
                accuracy_parity_difference(ps, grouping)
            continue
        assert accuracy_parity_difference(ps, grouping) == pytest.approx(want, abs=1e-15)
        checked += 1
    assert checked >= 100


@given(st.lists(st.floats(0, 1), min_size=2, max_size=8), st.permutations(range(8)), st.floats(0, 1))
def test_apd_properties(accs, perm, extra):
    apd = parity_difference(accs)
    assert 0 <= apd <= 1
    assert parity_difference([accs[i] for i in sorted(range(len(accs)), key=lambda i: perm[i])]) == apd
    inside = min(accs) + extra * (max(accs) - min(accs))
    assert parity_difference(accs + [min(max(inside, min(accs)), max(accs))]) == apd
    assert (apd == 0) == (len(set(accs)) == 1)


def test_report_apd_examples():
    ps = []
    i = 0
    # rate 150: zone accuracies 1.0 / 0.96 -> 0.04 ; rate 250: 1.0 / 0.92 -> 0.08
    for fs, wrong in ((150.0, 1), (250.0, 2)):
        for k in range(25):
            ps.append(P(i, 1, 1, "Baseline", fs)); i += 1
            ps.append(P(i, 1, 0 if k < wrong else 1, "St-Dg+", fs)); i += 1
    s = report_apd(ps)
    assert (s.mean, s.std) == pytest.approx((0.06, 0.02))
    same = [P(j, 1, 1 if j % 3 else 0, z, fs) for j, (z, fs) in
            enumerate((z, fs) for fs in (150.0, 500.0) for z in ("Baseline", "St-Dg+") for _ in range(6))]
    assert report_apd(same).std == 0
    gap = ps + [P(999, 1, 1, "Baseline", 300.0)]
    assert report_apd(gap).excluded_rates == [300.0]


def test_report_apd_matches_brute_force():
    checked = 0
    for seed in range(N_SETS * 2):
        ps = list(random_prediction_set(seed, n_max=60))
        want = brute_report_apd(ps)
        if want is None:
            continue
        got = report_apd(ps)
        assert (got.mean, got.std) == pytest.approx(want, abs=1e-12)
        checked += 1
    assert checked >= 100


# -- per-patient curves ---------------------------------------------------
def test_threshold_curve_examples():
    perfect = [P(i, 1, 1, pid=f"P{i}") for i in range(4)]
    assert per_patient_threshold_curve(perfect)["Baseline"][:-1] == [4] * 50
    ninety = [P(i, 1, 1 if i else 0) for i in range(10)]
    curve = dict(zip(THRESHOLD_GRID, per_patient_threshold_curve(ninety)["Baseline"]))
    assert curve[0.85] == 1 and curve[0.95] == 0


def test_threshold_curve_matches_recount():
    for seed in range(N_SETS):
        ps = list(random_prediction_set(seed))
        assert per_patient_threshold_curve(ps) == brute_threshold_curve(ps, THRESHOLD_GRID)


# -- ROC and OHR ----------------------------------------------------------
def test_roc_hand_example():
    roc = roc_curve([True, True, False, False], [100, 110, 60, 70])
    assert roc.points() == [(0, 0, math.inf), (0, 0.5, 110), (0, 1, 100), (0.5, 1, 70), (1, 1, 60),
                            (1, 1, -math.inf)]
    assert auc(roc) == 1.0
    y = youden_ohr(roc)
    assert y.threshold == 100 and y.youden_j == 1 and y.informative


def test_roc_single_class_undefined():
    with pytest.raises(UndefinedROCError):
        roc_curve([False, False], [60, 70])


def test_flat_roc_is_uninformative_lowest_threshold():
    roc = roc_curve([True, False, True, False], [60, 60, 80, 80])
    y = youden_ohr(roc)
    assert y.youden_j == 0 and y.threshold == 60 and not y.informative


def test_roc_and_youden_match_enumeration():
    checked = 0
    for seed in range(N_SETS * 2):
        ps = list(random_prediction_set(seed))
        mis = [e.y_true != e.y_pred for e in ps]
        bpm = [e.average_bpm for e in ps]
        want = brute_roc(mis, bpm)
        if want is None:
            continue
        roc = roc_curve(mis, bpm)
        assert len(roc.points()) == len(want)
        for (f, t, th), (wf, wt, wth) in zip(roc.points(), want):
            assert (f, t, th) == pytest.approx((wf, wt, wth), abs=1e-15)
        assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
        assert 0 <= auc(roc) <= 1
        y = youden_ohr(roc)
        assert (y.threshold, y.youden_j) == pytest.approx(brute_youden(want), abs=1e-15)
        checked += 1
    assert checked >= 100


def test_shuffled_predictor_auc_near_half():
    aucs = []
    for seed in range(20):
        r = np.random.default_rng(seed)
        mis = r.random(2000) < 0.3
        aucs.append(auc(roc_curve(mis, r.permutation(r.normal(70, 10, 2000)))))
    assert abs(np.mean(aucs) - 0.5) < 0.05


def test_error_rates_examples_and_recount():
    ps = [P(0, 1, 0, bpm=100), P(1, 1, 1, bpm=60), P(2, 0, 0, bpm=65)]
    above, below = error_rates_by_ohr(ps, {"P0": 80})
    assert above > 0 and below == 0
    assert error_rates_by_ohr([P(0, 1, 1, bpm=100), P(1, 0, 0, bpm=50)], {"P0": 80}) == (0, 0)
    for seed in range(N_SETS):
        ps = list(random_prediction_set(seed))
        ohr, _ = patient_ohr(ps)
        omap = {k: v.threshold for k, v in ohr.items()}
        assert error_rates_by_ohr(ps, omap) == brute_error_rates(ps, omap)


# -- report ---------------------------------------------------------------
def test_report_consistency_and_round_trip():
    ps = random_prediction_set(7, n_max=80)
    rep = build_report(ps)
    assert sum(rep.rate_counts.values()) == len(ps) == rep.n_predictions
    assert sum(rep.zone_counts.values()) == sum(e.zone != "Unassigned" for e in ps)
    again = EvalReport.from_json(rep.to_json())
    assert again.to_json() == rep.to_json()
    assert zone_table_csv(again).splitlines()[0] == "zone,n,accuracy"
    assert rate_table_csv(again) == rate_table_csv(rep)
    assert threshold_curve_csv(rep).splitlines()[0] == "threshold,Baseline,St-Dg+,St+Dg+"
    json.loads(rep.to_json())


def test_perfect_and_all_negative_stubs():
    ps = PredictionSet(P(i, i % 2, i % 2, zone=("Baseline", "St-Dg+", "St+Dg+")[i % 3], fs=(150.0, 500.0)[i % 2])
                       for i in range(24))
    rep = build_report(ps)
    assert rep.apd_zones == 0 and rep.apd_rates == 0
    assert all(v == 1.0 for v in rep.per_zone.values())
    neg = PredictionSet(P(i, int(i < 6), 0) for i in range(20))
    assert build_report(neg).overall["accuracy"] == pytest.approx(14 / 20)


def test_prediction_set_validation():
    with pytest.raises(InvalidArgumentError):
        PredictionSet([P(0, 1, 1), P(0, 1, 1)])
    with pytest.raises(InvalidArgumentError):
        PredictionSet([P(0, 1, 1, score=1.5)])
