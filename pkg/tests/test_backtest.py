import json

import numpy as np
import pytest
from conftest import SKEWED_MIX

from tenderrisk.backtest import (
    BacktestReport,
    BacktestSettings,
    build_fold_plan,
    feature_selection_sweep,
    fold_count,
    leakage_audit,
    prepare_frame,
    raw_importance,
    run_backtest,
    window_sweep,
)
from tenderrisk.domain import InvalidInputError, SegmentKey
from tenderrisk.features import default_schema
from tenderrisk.gbdt import Hyperparams
from tenderrisk.labeling import derive_labels
from tenderrisk.synthgen import GeneratorConfig, SegmentSpec, default_attribute_schema, generate_portfolio

HP = Hyperparams(num_iterations=10, num_leaves=7, min_data_in_leaf=20)


def check_plan(plan, total, train, test):
    assert len(plan.folds) == fold_count(total, train, test)
    for i, f in enumerate(plan.folds):
        assert f.index == i
        assert len(f.train) == train and len(f.test) == test
        assert max(f.train) < min(f.test)
        assert list(f.train) == list(range(f.train[0], f.train[0] + train))
        assert list(f.test) == list(range(f.test[0], f.test[0] + test))
        assert max(f.test) < total
        if i:
            prev = plan.folds[i - 1]
            assert f.train[0] - prev.train[0] == test and f.test[0] - prev.test[0] == test


def test_eleven_quarters_give_seven_folds():
    plan = build_fold_plan(11, 4, 1)
    assert len(plan.folds) == 7
    assert plan.folds[0].train == (0, 1, 2, 3) and plan.folds[0].test == (4,)


def test_minimum_span_gives_one_fold():
    assert len(build_fold_plan(5, 4, 1).folds) == 1


def test_short_span_error_names_minimum():
    with pytest.raises(InvalidInputError, match="at least 5 quarters"):
        build_fold_plan(4, 4, 1)


@pytest.mark.parametrize("total", range(5, 17))
def test_plan_invariants_over_sweep(total):
    for train in range(2, 11):
        if total < train + 1:
            with pytest.raises(InvalidInputError):
                build_fold_plan(total, train, 1)
            continue
        plan = build_fold_plan(total, train, 1)
        check_plan(plan, total, train, 1)
        assert len(plan.folds) == total - train
        # every quarter after the first train window is tested exactly once
        tested = [q for f in plan.folds for q in f.test]
        assert tested == list(range(train, total))


@pytest.mark.parametrize("test", [2, 3])
def test_wider_test_windows_shift_by_window(test):
    plan = build_fold_plan(13, 4, test)
    check_plan(plan, 13, 4, test)


def test_plan_from_quarter_indices():
    plan = build_fold_plan([8072, 8070, 8073, 8071, 8074, 8075], 4, 1)
    assert len(plan.folds) == 2 and plan.folds[0].train[0] == 8070


@pytest.fixture(scope="module")
def small_run(small_labeled):
    frame = prepare_frame(small_labeled)
    plan = build_fold_plan(np.unique(frame["quarter"]), 4, 1)
    settings = BacktestSettings(hp=HP, seed=3)
    return frame, plan, settings, run_backtest(frame, plan, settings, segment="BU2/GEO4")


def test_backtest_scores_every_fold(small_run):
    frame, plan, _, rep = small_run
    assert len(rep.folds) == len(plan.folds)
    assert rep.averages["n_folds_scored"] == len(rep.scored)
    for f in rep.scored:
        assert f.n_train > 0 and f.n_test > 0
        assert f.report.accuracy > 0.5


def test_averages_equal_recomputed_means(small_run):
    _, _, _, rep = small_run
    for name in ("accuracy", "precision", "recall", "f1", "macro_auc"):
        assert abs(rep.averages[name] - np.mean([getattr(f.report, name) for f in rep.scored])) <= 1e-12
    assert rep.averages["recall"] == pytest.approx(rep.averages["accuracy"], abs=1e-12)


def test_report_json_round_trip(small_run):
    _, _, _, rep = small_run
    text = json.dumps(rep.to_dict())
    back = BacktestReport.from_dict(json.loads(text))
    assert back.to_dict() == rep.to_dict()


def test_shuffling_rows_leaves_report_unchanged(small_run):
    frame, plan, settings, rep = small_run
    shuffled = frame.sample(frac=1.0, random_state=0)
    again = run_backtest(shuffled, plan, settings, segment="BU2/GEO4")
    assert again.to_dict() == rep.to_dict()


def test_backtest_is_deterministic(small_run):
    frame, plan, settings, rep = small_run
    assert run_backtest(frame, plan, settings, segment="BU2/GEO4").to_dict() == rep.to_dict()


def test_fold_without_test_rows_is_skipped(small_run):
    frame, plan, settings, _ = small_run
    last = plan.folds[-1].test[0]
    rep = run_backtest(frame[frame["quarter"] != last], plan, settings)
    assert rep.folds[-1].report is None and rep.folds[-1].skipped == "no test examples"
    assert rep.averages["n_folds_scored"] == len(plan.folds) - 1


def test_separable_segment_is_nearly_perfect():
    cfg = GeneratorConfig(seed=2, segments=(SegmentSpec(SegmentKey("B", "G"), 250, SKEWED_MIX),),
                          quarters_span=7, signal_strength=4.0)
    frame = prepare_frame(derive_labels(generate_portfolio(cfg)).labeled)
    plan = build_fold_plan(np.unique(frame["quarter"]), 4, 1)
    rep = run_backtest(frame, plan, BacktestSettings(hp=HP))
    assert rep.averages["accuracy"] >= 0.95


def test_invalid_settings():
    with pytest.raises(InvalidInputError):
        BacktestSettings(mode="smote")
    with pytest.raises(InvalidInputError):
        BacktestSettings(scope="global")


def test_leakage_audit_hashes_match(small_labeled):
    frame = prepare_frame(small_labeled)
    plan = build_fold_plan(np.unique(frame["quarter"]), 4, 1)
    settings = BacktestSettings(mode="grid", grid_resolution=5, hp=HP, seed=1)
    audit = leakage_audit(frame, plan, settings)
    assert len(audit) == len(plan.folds)
    for _, full, truncated in audit:
        assert full == truncated


def test_window_sweep_rows(small_labeled):
    rows = window_sweep(small_labeled, sizes=range(2, 6), settings=BacktestSettings(hp=HP))
    assert [r["train_window"] for r in rows] == [2, 3, 4, 5]
    total = len(np.unique(prepare_frame(small_labeled)["quarter"]))
    for r in rows:
        assert r["n_folds"] == fold_count(total, r["train_window"], 1)
    again = window_sweep(small_labeled, sizes=range(2, 6), settings=BacktestSettings(hp=HP))
    assert max(rows, key=lambda r: r["accuracy"])["train_window"] == \
        max(again, key=lambda r: r["accuracy"])["train_window"]


def test_feature_selection_sweep_is_monotone(small_run, small_labeled):
    frame, plan, settings, _ = small_run
    rows = feature_selection_sweep(frame, plan, (0, 5, 10), settings, default_schema(small_labeled))
    pct = [r["removed_pct"] for r in rows]
    assert pct == sorted(pct)
    assert all(set(a["removed"]) <= set(b["removed"]) for a, b in zip(rows[1:], rows[2:]))


def test_threshold_zero_removes_exactly_unused(small_run, small_labeled):
    frame, plan, settings, rep = small_run
    schema = default_schema(small_labeled)
    imp = raw_importance(schema, rep.folds[0].importance)
    rows = feature_selection_sweep(frame, plan, (0,), settings, schema)
    assert rows[1]["removed"] == sorted(k for k, v in imp.items() if v == 0)


def test_threshold_removing_everything_errors(small_run, small_labeled):
    frame, plan, settings, _ = small_run
    with pytest.raises(InvalidInputError):
        feature_selection_sweep(frame, plan, (10**9,), settings, default_schema(small_labeled))


def test_threshold_zero_finds_noise_columns():
    # a deliberately small model so that pure-noise columns go unused
    hp = Hyperparams(num_iterations=10, num_leaves=4, min_data_in_leaf=50)
    for seed in range(10):
        cfg = GeneratorConfig(seed=seed, segments=(SegmentSpec(SegmentKey("B", "G"), 250, SKEWED_MIX),),
                              quarters_span=6, attribute_schema=tuple(default_attribute_schema(n_noise=10)))
        frame = prepare_frame(derive_labels(generate_portfolio(cfg)).labeled)
        plan = build_fold_plan(np.unique(frame["quarter"]), 4, 1)
        rows = feature_selection_sweep(frame, plan, (0,), BacktestSettings(hp=hp))
        assert sum(name.startswith("noise_") for name in rows[1]["removed"]) >= 5
