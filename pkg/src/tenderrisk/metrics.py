"""One-vs-rest multi-class metrics.

Precision, recall and F1 are support-weighted averages of the per-class
one-vs-rest values (weighted recall is therefore identical to accuracy).
AUC is averaged without weights over the classes present in the truth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .domain import N_CLASSES, InvalidInputError

METRICS = ("accuracy", "precision", "recall", "f1", "auc")
AVERAGINGS = ("weighted", "macro")


@dataclass(frozen=True)
class OvrConfusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _aligned(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise InvalidInputError("y_true and y_pred must be 1-D vectors of equal length")
    return y_true, y_pred


def ovr_confusion(y_true, y_pred, k: int) -> OvrConfusion:
    y_true, y_pred = _aligned(y_true, y_pred)
    t = y_true == k
    p = y_pred == k
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    fn = int(np.sum(t & ~p))
    return OvrConfusion(tp, fp, len(y_true) - tp - fp - fn, fn)


def _ratio(num: float, den: float) -> tuple[float, bool]:
    """``num/den`` with the 0/0 -> 0 convention; the flag marks that case."""
    if den == 0:
        return 0.0, True
    return num / den, False


def prf1(c: OvrConfusion, flags: list | None = None) -> tuple[float, float, float]:
    """Precision, recall and F1 of one confusion; undefined ratios become 0.

    When ``flags`` is given, names of ratios that hit 0/0 are appended.
    """
    p, fp_ = _ratio(c.tp, c.tp + c.fp)
    r, fr_ = _ratio(c.tp, c.tp + c.fn)
    f, ff_ = _ratio(2 * p * r, p + r)
    if flags is not None:
        flags.extend(name for name, hit in (("precision", fp_), ("recall", fr_), ("f1", ff_)) if hit)
    return p, r, f


def weighted_average(values, supports) -> float:
    values = np.asarray(values, dtype=np.float64)
    supports = np.asarray(supports, dtype=np.float64)
    if values.shape != supports.shape:
        raise InvalidInputError("values and supports must align")
    total = supports.sum()
    if total <= 0:
        raise InvalidInputError("total support is zero")
    return float(np.dot(values, supports) / total)


def roc_auc(scores, truth) -> float | None:
    """Mann-Whitney AUC with ties counted as half; ``None`` for single-class truth."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape:
        raise InvalidInputError("scores and truth must align")
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_mean(values) -> float:
    """Unweighted mean over the present (non-``None``) values."""
    present = [v for v in values if v is not None]
    if not present:
        return float("nan")
    return math.fsum(present) / len(present)


@dataclass
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    class_auc: list
    macro_auc: float
    support: list
    macro_precision: float = 0.0
    macro_recall: float = 0.0
    macro_f1: float = 0.0
    flags: list = field(default_factory=list)

    def value(self, metric: str, averaging: str = "weighted") -> float:
        if metric not in METRICS or averaging not in AVERAGINGS:
            raise InvalidInputError(f"unknown metric {metric!r}/{averaging!r}")
        if metric == "accuracy":
            return self.accuracy
        if metric == "auc":
            # per-class AUC is only defined one way; weighted uses supports
            if averaging == "macro":
                return self.macro_auc
            vals = [(a, s) for a, s in zip(self.class_auc, self.support) if a is not None]
            return weighted_average([a for a, _ in vals], [s for _, s in vals]) if vals else float("nan")
        if averaging == "macro":
            return getattr(self, f"macro_{metric}")
        return getattr(self, metric)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "class_auc": list(self.class_auc),
            "macro_auc": self.macro_auc,
            "support": list(self.support),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**d)


def report_from_predictions(y_true, y_pred, proba=None) -> MetricReport:
    y_true, y_pred = _aligned(y_true, y_pred)
    if len(y_true) == 0:
        raise InvalidInputError("cannot score an empty prediction set")
    flags: list[str] = []
    per_class = []
    support = []
    for k in range(N_CLASSES):
        c = ovr_confusion(y_true, y_pred, k)
        hit: list[str] = []
        per_class.append(prf1(c, hit))
        flags.extend(f"class{k}_{h}_undefined" for h in hit)
        support.append(c.tp + c.fn)
    p, r, f = (np.array([pc[j] for pc in per_class]) for j in range(3))
    aucs: list = [None] * N_CLASSES
    if proba is not None:
        for k in range(N_CLASSES):
            aucs[k] = roc_auc(proba[:, k], y_true == k)
            if aucs[k] is None:
                flags.append(f"class{k}_auc_absent")
    return MetricReport(
        accuracy=float(np.mean(y_true == y_pred)),
        precision=weighted_average(p, support),
        recall=weighted_average(r, support),
        f1=weighted_average(f, support),
        class_auc=aucs,
        macro_auc=macro_mean(aucs),
        support=support,
        macro_precision=float(p.mean()),
        macro_recall=float(r.mean()),
        macro_f1=float(f.mean()),
        flags=flags,
    )


def full_report(y_true, proba) -> MetricReport:
    """All metrics for an ``(n, 4)`` probability matrix; prediction is the argmax."""
    proba = np.asarray(proba, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.int64)
    if proba.ndim != 2 or proba.shape != (len(y_true), N_CLASSES):
        raise InvalidInputError("probabilities must have shape (n, 4) aligned with y_true")
    if not np.allclose(proba.sum(axis=1), 1.0, atol=1e-6, rtol=0):
        raise InvalidInputError("probability rows must sum to 1")
    return report_from_predictions(y_true, proba.argmax(axis=1), proba)


def average_reports(reports: list[MetricReport]) -> dict:
    """Fold-averaged summary: mean of each scalar and of each present class AUC."""
    if not reports:
        raise InvalidInputError("no reports to average")
    out = {
        name: float(np.mean([getattr(r, name) for r in reports]))
        for name in ("accuracy", "precision", "recall", "f1", "macro_auc")
    }
    for k in range(N_CLASSES):
        out[f"class{k}_auc"] = macro_mean([r.class_auc[k] for r in reports])
    return out
