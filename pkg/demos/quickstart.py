"""Generate a small portfolio, label it, run a rolling-window backtest and
print the fold-averaged metrics.

    python demos/quickstart.py
"""
import numpy as np

from tenderrisk.backtest import BacktestSettings, build_fold_plan, prepare_frame, run_backtest
from tenderrisk.domain import SegmentKey
from tenderrisk.gbdt import Hyperparams
from tenderrisk.labeling import class_count_table, derive_labels, partition_by_segment
from tenderrisk.synthgen import GeneratorConfig, SegmentSpec, generate_portfolio

MIX = (0.68, 0.21, 0.08, 0.03)

# 1. weekly snapshots for one segment over eleven quarters
config = GeneratorConfig(seed=1, segments=(SegmentSpec(SegmentKey("BU2", "GEO4"), 400, MIX),))
snapshots = generate_portfolio(config)
print(f"{len(snapshots)} snapshots of {snapshots['opportunity_id'].nunique()} opportunities")

# 2. every open snapshot inherits its opportunity's eventual outcome
labeling = derive_labels(snapshots)
print(class_count_table(partition_by_segment(labeling.labeled)).to_string(index=False))
print(f"{len(labeling.inflight)} opportunities are still open and left out")

# 3. train on four quarters, test on the next, roll forward
frame = prepare_frame(labeling.labeled)
plan = build_fold_plan(np.unique(frame["quarter"]), train_window=4, test_window=1)
print(f"{len(plan.folds)} folds")
settings = BacktestSettings(mode="none", hp=Hyperparams(num_iterations=40, num_leaves=15))
report = run_backtest(frame, plan, settings, segment="BU2/GEO4")

for fold in report.folds:
    r = fold.report
    print(f"fold {fold.index}: test {fold.test[0]}  accuracy {r.accuracy:.4f}  macro AUC {r.macro_auc:.4f}")
print({k: round(v, 4) for k, v in report.averages.items()})
