"""Rolling-window temporal backtests, the window-size sweep and the
importance-threshold feature-selection sweep.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .domain import InvalidInputError, SegmentKey
from .features import (
    DERIVED_RATE,
    STATIC_CATEGORICAL,
    TEMPORAL_FEATURES,
    FeatureSchema,
    Featurizer,
    add_temporal_features,
    default_schema,
    sort_for_features,
)
from .gbdt import Hyperparams, feature_importance, predict_proba, to_bytes
from .imbalance import (
    ClassWeights,
    ObjectiveSpec,
    Split,
    bayes_opt,
    grid_search,
    train_weighted,
)
from .labeling import Quarter, quarter_index
from .metrics import MetricReport, average_reports, full_report
from .seeding import derive_seed

MODES = ("none", "grid", "bayes")
SCOPES = ("per-segment", "per-fold")


@dataclass(frozen=True)
class Fold:
    index: int
    train: tuple
    test: tuple


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    train_window: int
    test_window: int

    def to_dict(self) -> dict:
        return {
            "train_window": self.train_window,
            "test_window": self.test_window,
            "folds": [
                {"index": f.index, "train": [str(Quarter.from_index(q)) for q in f.train],
                 "test": [str(Quarter.from_index(q)) for q in f.test]}
                for f in self.folds
            ],
        }


def build_fold_plan(quarters, train_window: int = 4, test_window: int = 1) -> FoldPlan:
    """Rolling folds over a contiguous quarter span.

    ``quarters`` is either a count (quarters ``0..n-1``) or the quarter
    indices present in the data; the plan covers the span from the first to
    the last of them.
    """
    if train_window < 1 or test_window < 1:
        raise InvalidInputError("train and test windows must be at least one quarter")
    if isinstance(quarters, (int, np.integer)):
        first, total = 0, int(quarters)
    else:
        q = np.asarray([x.index if isinstance(x, Quarter) else int(x) for x in quarters], dtype=np.int64)
        if len(q) == 0:
            raise InvalidInputError("no quarters present")
        first, total = int(q.min()), int(q.max() - q.min() + 1)
    need = train_window + test_window
    if total < need:
        raise InvalidInputError(
            f"a train window of {train_window} and test window of {test_window} need at least "
            f"{need} quarters of data, got {total}"
        )
    folds = []
    for i in range(fold_count(total, train_window, test_window)):
        start = first + i * test_window
        folds.append(Fold(i, tuple(range(start, start + train_window)),
                          tuple(range(start + train_window, start + need))))
    return FoldPlan(tuple(folds), train_window, test_window)


def fold_count(total_quarters: int, train_window: int, test_window: int) -> int:
    """Folds that fit when each fold shifts by ``test_window`` quarters.

    With a one-quarter test window this is ``total - train - test + 1``.
    """
    return max(0, (total_quarters - train_window - test_window) // test_window + 1)


@dataclass
class FoldResult:
    index: int
    train: list
    test: list
    n_train: int
    n_test: int
    report: MetricReport | None
    weights: ClassWeights | None
    model_hash: str
    skipped: str = ""
    importance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "train": self.train,
            "test": self.test,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "report": self.report.to_dict() if self.report else None,
            "weights": self.weights.to_dict() if self.weights else None,
            "model_hash": self.model_hash,
            "skipped": self.skipped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldResult":
        return cls(
            index=d["index"], train=d["train"], test=d["test"], n_train=d["n_train"], n_test=d["n_test"],
            report=MetricReport.from_dict(d["report"]) if d["report"] else None,
            weights=ClassWeights.from_dict(d["weights"]) if d["weights"] else None,
            model_hash=d["model_hash"], skipped=d["skipped"],
        )


@dataclass
class BacktestReport:
    segment: str
    mode: str
    folds: list
    averages: dict
    config: dict

    @property
    def scored(self) -> list:
        return [f for f in self.folds if f.report is not None]

    def to_dict(self) -> dict:
        return {
            "segment": self.segment,
            "mode": self.mode,
            "folds": [f.to_dict() for f in self.folds],
            "averages": dict(self.averages),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BacktestReport":
        return cls(d["segment"], d["mode"], [FoldResult.from_dict(f) for f in d["folds"]],
                   d["averages"], d["config"])


def model_hash(model) -> str:
    return hashlib.sha256(to_bytes(model)).hexdigest()


@dataclass
class BacktestSettings:
    mode: str = "none"
    hp: Hyperparams = field(default_factory=Hyperparams)
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    budget: int = 35
    grid_resolution: int = 8
    scope: str = "per-segment"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown weights mode {self.mode!r}; expected one of {MODES}")
        if self.scope not in SCOPES:
            raise InvalidInputError(f"unknown optimization scope {self.scope!r}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "hyperparams": self.hp.to_dict(),
            "objective": {"metric": self.objective.metric, "averaging": self.objective.averaging},
            "budget": self.budget,
            "grid_resolution": self.grid_resolution,
            "scope": self.scope,
            "seed": self.seed,
        }


def prepare_frame(labeled: pd.DataFrame) -> pd.DataFrame:
    """Labeled rows with temporal features and a ``quarter`` column, in
    canonical (opportunity, date) order so results never depend on input order."""
    if set(TEMPORAL_FEATURES) <= set(labeled.columns):
        frame = sort_for_features(labeled)
    else:
        frame = add_temporal_features(labeled)
    if "quarter" not in frame.columns:
        frame = frame.assign(quarter=quarter_index(frame["record_date"]))
    return frame


def _rows(frame, quarters) -> pd.DataFrame:
    return frame[frame["quarter"].isin(quarters)]


def optimize_weights(frame: pd.DataFrame, train_quarters, schema: FeatureSchema, settings: BacktestSettings,
                     purpose: str):
    """Search class weights with the last train quarter as validation."""
    if settings.mode == "none":
        return None, None
    inner, valid_q = tuple(train_quarters[:-1]), (train_quarters[-1],)
    inner_rows, valid_rows = _rows(frame, inner), _rows(frame, valid_q)
    if len(inner_rows) == 0 or len(valid_rows) == 0:
        raise InvalidInputError("weight optimization needs rows in both the inner train and validation quarters")
    fz = Featurizer(schema, seed=derive_seed(settings.seed, "features", purpose, "inner"))
    tr = Split.from_matrix(fz.fit_transform(inner_rows))
    va = Split.from_matrix(fz.transform(valid_rows))
    model_seed = derive_seed(settings.seed, "gbdt", purpose, "inner")
    if settings.mode == "grid":
        result = grid_search(tr, va, settings.objective, settings.grid_resolution, settings.hp, model_seed)
    else:
        result = bayes_opt(tr, va, settings.objective, settings.budget,
                           derive_seed(settings.seed, "bayes", purpose), settings.hp, model_seed)
    return result.best_weights, result


def _fit_fold_model(train_rows: pd.DataFrame, fold: Fold, schema: FeatureSchema, settings: BacktestSettings,
                    weights: ClassWeights | None):
    fz = Featurizer(schema, seed=derive_seed(settings.seed, "features", "fold", str(fold.index)))
    tm = fz.fit_transform(train_rows)
    X, names = tm.train_view()
    model = train_weighted(X, tm.labels, weights, settings.hp,
                           seed=derive_seed(settings.seed, "gbdt", "fold", str(fold.index)),
                           feature_names=names, schema_fingerprint=tm.fingerprint)
    return fz, model


def _train_only_hash(frame: pd.DataFrame, fold: Fold, schema: FeatureSchema, settings: BacktestSettings,
                     weights: ClassWeights | None) -> str:
    return model_hash(_fit_fold_model(_rows(frame, fold.train), fold, schema, settings, weights)[1])


def run_fold(frame: pd.DataFrame, fold: Fold, schema: FeatureSchema, settings: BacktestSettings,
             weights: ClassWeights | None, keep_model: bool = False):
    """Featurize, train and score one fold; returns ``(FoldResult, model)``."""
    train_rows, test_rows = _rows(frame, fold.train), _rows(frame, fold.test)
    train_q = [str(Quarter.from_index(q)) for q in fold.train]
    test_q = [str(Quarter.from_index(q)) for q in fold.test]
    if len(test_rows) == 0 or len(train_rows) == 0:
        reason = "no test examples" if len(train_rows) else "no train examples"
        return FoldResult(fold.index, train_q, test_q, len(train_rows), len(test_rows), None, weights, "", reason), None
    fz, model = _fit_fold_model(train_rows, fold, schema, settings, weights)
    te = fz.transform(test_rows)
    report = full_report(te.labels, predict_proba(model, te.train_view()[0], te.fingerprint))
    result = FoldResult(fold.index, train_q, test_q, len(train_rows), len(test_rows), report, weights,
                        model_hash(model), importance=feature_importance(model))
    return result, (model if keep_model else None)


def run_backtest(labeled: pd.DataFrame, plan: FoldPlan, settings: BacktestSettings | None = None,
                 schema: FeatureSchema | None = None, segment: str | SegmentKey = "",
                 keep_models: bool = False):
    """Rolling-window backtest of one segment.

    Returns the report, plus the per-fold models when ``keep_models``.
    """
    settings = settings or BacktestSettings()
    frame = prepare_frame(labeled)
    schema = schema or default_schema(labeled)
    folds, models = [], []
    shared = None
    for fold in plan.folds:
        weights = None
        if settings.mode != "none":
            if settings.scope == "per-segment":
                if shared is None:
                    shared = optimize_weights(frame, plan.folds[0].train, schema, settings, "segment")[0]
                weights = shared
            else:
                weights = optimize_weights(frame, fold.train, schema, settings, f"fold{fold.index}")[0]
        result, model = run_fold(frame, fold, schema, settings, weights, keep_model=keep_models)
        folds.append(result)
        models.append(model)
    scored = [f.report for f in folds if f.report is not None]
    averages = average_reports(scored) if scored else {}
    averages["n_folds_scored"] = len(scored)
    config = {
        "segment": str(segment),
        "plan": plan.to_dict(),
        "settings": settings.to_dict(),
        "schema_fingerprint": schema.fingerprint(),
    }
    report = BacktestReport(str(segment), settings.mode, folds, averages, config)
    return (report, models) if keep_models else report


def leakage_audit(labeled: pd.DataFrame, plan: FoldPlan, settings: BacktestSettings | None = None,
                  schema: FeatureSchema | None = None) -> list[tuple[int, str, str]]:
    """Refit every fold after deleting its test-span rows (and all later
    rows) and return ``(fold, full_hash, truncated_hash)`` triples.

    The class-weight search is repeated on the truncated data as well, so
    the check covers the optimizer's choice too.
    """
    settings = settings or BacktestSettings()
    schema = schema or default_schema(labeled)
    frame = prepare_frame(labeled)
    full = run_backtest(frame, plan, settings, schema)
    out = []
    for fold, res in zip(plan.folds, full.folds):
        if res.report is None:
            continue
        truncated = frame[frame["quarter"] < min(fold.test)]
        weights = None
        if settings.mode != "none":
            if settings.scope == "per-segment":
                weights = optimize_weights(truncated, plan.folds[0].train, schema, settings, "segment")[0]
            else:
                weights = optimize_weights(truncated, fold.train, schema, settings, f"fold{fold.index}")[0]
        out.append((fold.index, res.model_hash, _train_only_hash(truncated, fold, schema, settings, weights)))
    return out


def window_sweep(labeled: pd.DataFrame, sizes=range(2, 11), test_window: int = 1,
                 settings: BacktestSettings | None = None, schema: FeatureSchema | None = None,
                 segment: str = "") -> list[dict]:
    """One backtest per train-window size; rows hold the fold-averaged metrics."""
    frame = prepare_frame(labeled)
    schema = schema or default_schema(labeled)
    quarters = np.unique(frame["quarter"].to_numpy())
    rows = []
    for size in sizes:
        plan = build_fold_plan(quarters, size, test_window)
        rep = run_backtest(frame, plan, settings, schema, segment)
        rows.append({"train_window": size, "n_folds": len(plan.folds), **rep.averages})
    return rows


def raw_importance(schema: FeatureSchema, column_importance: dict) -> dict:
    """Split counts summed over the matrix columns each raw feature produces."""
    out = {}
    for c in schema.columns:
        if c.name in schema.non_train:
            continue
        if c.kind == STATIC_CATEGORICAL:
            out[c.name] = sum(v for k, v in column_importance.items() if k.split("__")[0] == c.name)
        else:
            out[c.name] = column_importance.get(c.name, 0)
    return out


def feature_selection_sweep(labeled: pd.DataFrame, plan: FoldPlan, thresholds=(0, 10, 20, 30),
                            settings: BacktestSettings | None = None, schema: FeatureSchema | None = None,
                            segment: str = "") -> list[dict]:
    """Drop features whose baseline fold-1 split count is at most each
    threshold and re-run the backtest on the reduced schema.
    """
    frame = prepare_frame(labeled)
    schema = schema or default_schema(labeled)
    base = run_backtest(frame, plan, settings, schema, segment)
    first = next((f for f in base.folds if f.report is not None), None)
    if first is None:
        raise InvalidInputError("baseline backtest scored no folds")
    imp = raw_importance(schema, first.importance)
    rows = [{"threshold": None, "removed": [], "removed_pct": 0.0, **base.averages}]
    for t in thresholds:
        removed = sorted(name for name, v in imp.items() if v <= t)
        if len(removed) == len(imp):
            raise InvalidInputError(f"threshold {t} removes every feature")
        rep = run_backtest(frame, plan, settings, schema.without(removed), segment)
        rows.append({"threshold": t, "removed": removed, "removed_pct": 100.0 * len(removed) / len(imp),
                     **rep.averages})
    return rows


__all__ = [
    "BacktestReport",
    "BacktestSettings",
    "DERIVED_RATE",
    "Fold",
    "FoldPlan",
    "FoldResult",
    "build_fold_plan",
    "feature_selection_sweep",
    "fold_count",
    "leakage_audit",
    "run_backtest",
    "window_sweep",
]
