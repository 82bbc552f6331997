import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import pair_count_auc, trapezoid_auc

from tenderrisk.domain import InvalidInputError
from tenderrisk.metrics import (
    MetricReport,
    OvrConfusion,
    average_reports,
    full_report,
    macro_mean,
    ovr_confusion,
    prf1,
    report_from_predictions,
    roc_auc,
    weighted_average,
)


def test_perfect_class():
    assert prf1(OvrConfusion(1, 0, 3, 0)) == (1.0, 1.0, 1.0)


def test_zero_over_zero_precision_is_flagged():
    flags = []
    p, r, f = prf1(OvrConfusion(0, 0, 5, 2), flags)
    assert (p, r, f) == (0.0, 0.0, 0.0)
    assert "precision" in flags and "f1" in flags and "recall" not in flags


def test_hand_arithmetic_prf1():
    p, r, f = prf1(OvrConfusion(3, 1, 0, 2))
    assert p == 0.75 and r == pytest.approx(0.6) and f == pytest.approx(2 / 3)


def test_confusion_counts():
    c = ovr_confusion([0, 0, 1, 2], [0, 1, 1, 0], 0)
    assert (c.tp, c.fp, c.tn, c.fn) == (1, 1, 1, 1) and c.n == 4


def test_weighted_average_examples():
    assert weighted_average([1, 1, 1, 1], [5, 0, 2, 9]) == 1.0
    assert weighted_average([0.1, 0.2, 0.3, 0.4], [2, 2, 2, 2]) == pytest.approx(0.25)
    with pytest.raises(InvalidInputError):
        weighted_average([1, 2, 3, 4], [0, 0, 0, 0])


def test_weighted_recall_equals_accuracy():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 60))
        y = rng.integers(0, 4, n)
        pred = rng.integers(0, 4, n)
        rep = report_from_predictions(y, pred)
        assert abs(rep.recall - rep.accuracy) <= 1e-12


@pytest.mark.parametrize("aucs,expected", [((0.9988, 0.8238, 0.8663, 0.8738), 0.890675),
                                           ((0.9996, 0.9281, 0.9063, 0.9167), 0.937675)])
def test_macro_auc_from_per_class_values(aucs, expected):
    assert macro_mean(aucs) == pytest.approx(expected, abs=1e-12)


def test_macro_mean_skips_absent():
    assert macro_mean([0.5, None, 1.0, None]) == 0.75
    assert math.isnan(macro_mean([None] * 4))


def test_auc_extremes():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert roc_auc([0.1, 0.2], [1, 1]) is None


def test_six_row_auc_matches_both_oracles():
    s = [0.3, 0.7, 0.7, 0.1, 0.9, 0.4]
    t = [0, 1, 0, 0, 1, 1]
    a = roc_auc(s, t)
    assert a == pytest.approx(pair_count_auc(s, t), abs=1e-9)
    assert a == pytest.approx(trapezoid_auc(s, t), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
def test_auc_matches_oracles_with_ties(rows):
    s = [r[0] / 5 for r in rows]
    t = [r[1] for r in rows]
    if all(t) or not any(t):
        assert roc_auc(s, t) is None
        return
    assert roc_auc(s, t) == pytest.approx(pair_count_auc(s, t), abs=1e-9)
    assert roc_auc(s, t) == pytest.approx(trapezoid_auc(s, t), abs=1e-9)


def test_full_report_validates_probabilities():
    with pytest.raises(InvalidInputError):
        full_report([0, 1], np.full((2, 4), 0.3))
    with pytest.raises(InvalidInputError):
        full_report([0, 1], np.full((3, 4), 0.25))


def test_full_report_absent_class_is_flagged():
    proba = np.array([[0.7, 0.1, 0.1, 0.1], [0.1, 0.7, 0.1, 0.1], [0.4, 0.5, 0.05, 0.05]])
    rep = full_report([0, 1, 0], proba)
    assert rep.class_auc[2] is None and rep.class_auc[3] is None
    assert "class2_auc_absent" in rep.flags
    assert rep.macro_auc == pytest.approx(np.mean([rep.class_auc[0], rep.class_auc[1]]))
    assert rep.accuracy == pytest.approx(2 / 3)


def test_report_is_order_free():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 4, 200)
    proba = rng.dirichlet(np.ones(4), 200)
    a = full_report(y, proba)
    perm = rng.permutation(200)
    b = full_report(y[perm], proba[perm])
    for name in ("accuracy", "precision", "recall", "f1"):
        assert getattr(a, name) == getattr(b, name)
    for k in range(4):
        assert a.class_auc[k] == pytest.approx(b.class_auc[k], abs=1e-15)


def test_report_dict_round_trip_and_values():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 4, 50)
    rep = full_report(y, rng.dirichlet(np.ones(4), 50))
    assert MetricReport.from_dict(rep.to_dict()) == rep
    assert rep.value("f1") == rep.f1 and rep.value("f1", "macro") == rep.macro_f1
    assert rep.value("auc", "macro") == rep.macro_auc
    with pytest.raises(InvalidInputError):
        rep.value("kappa")


def test_average_reports():
    rng = np.random.default_rng(3)
    reps = [full_report(y, rng.dirichlet(np.ones(4), 40)) for y in rng.integers(0, 4, (3, 40))]
    avg = average_reports(reps)
    assert avg["accuracy"] == pytest.approx(np.mean([r.accuracy for r in reps]))
    assert avg["class1_auc"] == pytest.approx(np.mean([r.class_auc[1] for r in reps]))
    with pytest.raises(InvalidInputError):
        average_reports([])
