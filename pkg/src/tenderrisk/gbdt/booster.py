"""Multi-class gradient boosted trees with leaf-wise growth.

Each boosting iteration computes softmax cross-entropy gradients and diagonal
hessians for the current raw scores and grows one regression tree per class
on them. Trees split on histogram bins and always expand the leaf with the
largest gain next.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from ..domain import N_CLASSES, InvalidInputError, SchemaError
from . import _kernels
from .binning import apply_bins, fit_bin_edges

HESSIAN_FLOOR = 1e-16
PROBA_FLOOR = 1e-15
MIN_SPLIT_GAIN = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    num_iterations: int = 100
    learning_rate: float = 0.1
    num_leaves: int = 31
    min_data_in_leaf: int = 20
    max_bin: int = 255
    l2_reg: float = 1.0
    boosting_type: str = "standard"
    class_weight: str = "none"

    def __post_init__(self):
        if self.num_iterations < 0:
            raise InvalidInputError("num_iterations must be non-negative")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.num_leaves < 2:
            raise InvalidInputError("num_leaves must be >= 2")
        if self.min_data_in_leaf < 1:
            raise InvalidInputError("min_data_in_leaf must be >= 1")
        if not 2 <= self.max_bin <= 256:
            raise InvalidInputError("max_bin must lie in [2, 256]")
        if self.l2_reg < 0:
            raise InvalidInputError("l2_reg must be non-negative")
        if self.boosting_type != "standard":
            raise InvalidInputError("only boosting_type='standard' is supported")
        if self.class_weight not in ("none", "external"):
            raise InvalidInputError("class_weight must be 'none' or 'external'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**d)


@dataclass
class Tree:
    """Array-backed tree; ``feature[i] == -1`` marks a leaf.

    Internal node ``i`` sends a row left when ``x[feature[i]] <= threshold[i]``
    (equivalently when its bin index is ``<= threshold_bin[i]``).
    """

    feature: np.ndarray
    threshold_bin: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @property
    def n_internal(self) -> int:
        return int((self.feature >= 0).sum())


@dataclass
class Ensemble:
    feature_names: list[str]
    base_scores: np.ndarray
    trees: list[list[Tree]]
    hyperparams: Hyperparams
    schema_fingerprint: str = ""
    seed: int = 0
    train_loss: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_iterations(self) -> int:
        return len(self.trees[0]) if self.trees else 0

    @cached_property
    def _flat(self):
        feats, thr, left, right, value, start, cls = [], [], [], [], [], [0], []
        # iteration-major order matches the sequence in which trees were added
        for it in range(self.n_iterations):
            for k in range(N_CLASSES):
                t = self.trees[k][it]
                feats.append(t.feature)
                thr.append(t.threshold)
                left.append(t.left)
                right.append(t.right)
                value.append(t.value)
                start.append(start[-1] + len(t.feature))
                cls.append(k)
        if not feats:
            empty_i = np.empty(0, dtype=np.int32)
            return (empty_i, np.empty(0), empty_i, empty_i, np.empty(0),
                    np.zeros(1, dtype=np.int64), np.empty(0, dtype=np.int64))
        return (
            np.concatenate(feats).astype(np.int32),
            np.concatenate(thr),
            np.concatenate(left).astype(np.int32),
            np.concatenate(right).astype(np.int32),
            np.concatenate(value),
            np.asarray(start, dtype=np.int64),
            np.asarray(cls, dtype=np.int64),
        )

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _kernels.predict_raw(X, np.asarray(self.base_scores, dtype=np.float64), *self._flat, N_CLASSES)


def softmax(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_grad_hess(scores, label, weight=1.0):
    """Gradient and diagonal hessian of ``weight * CE(softmax(scores), label)``.

    Works on a single score vector or on an ``(n, K)`` batch with aligned
    ``label`` and ``weight`` arrays.
    """
    p = softmax(scores)
    label = np.asarray(label)
    w = np.asarray(weight, dtype=np.float64)
    onehot = np.zeros_like(p)
    if p.ndim == 1:
        onehot[int(label)] = 1.0
    else:
        onehot[np.arange(p.shape[0]), label.astype(np.int64)] = 1.0
        w = w[..., None] if w.ndim == 1 else w
    grad = w * (p - onehot)
    hess = np.maximum(w * p * (1.0 - p), HESSIAN_FLOOR)
    return grad, hess


def weighted_log_loss(proba: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    p = np.maximum(proba[np.arange(len(y)), y], PROBA_FLOOR)
    return float(np.sum(w * -np.log(p)) / np.sum(w))


def _validate_inputs(X, y, weights):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("training matrix must be 2-D and non-empty")
    if not np.isfinite(X).all():
        raise InvalidInputError("training matrix contains NaN or infinite values")
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (X.shape[0],) or y.min() < 0 or y.max() >= N_CLASSES:
        raise InvalidInputError("labels must be a vector of class ids 0..3 aligned with the rows")
    if weights is None:
        w = np.ones(X.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != y.shape:
            raise InvalidInputError("sample weights must align with the rows")
        if not np.isfinite(w).all() or (w <= 0).any():
            raise InvalidInputError("sample weights must be finite and positive")
    return X, y, w


def normalize_weights(w: np.ndarray) -> np.ndarray:
    """Rescale to mean one; a constant vector becomes exactly all-ones."""
    if np.all(w == w[0]):
        return np.ones_like(w)
    return w / np.mean(w)


def _grow_tree(binned, dominant, n_bins, grad, hess, hp: Hyperparams, edges, workspace, scores, k) -> Tree:
    """Grow one tree leaf-wise and add its leaf values to ``scores[:, k]``."""
    partition, hist_pool = workspace
    feature, tbin, left, right, value, count = _kernels.grow_tree(
        binned, dominant, n_bins, grad, hess, hp.num_leaves, float(hp.min_data_in_leaf), hp.l2_reg,
        hp.learning_rate, MIN_SPLIT_GAIN, partition, hist_pool, scores, k,
    )
    threshold = np.array(
        [edges[f][b] if f >= 0 else 0.0 for f, b in zip(feature.tolist(), tbin.tolist())],
        dtype=np.float64,
    )
    return Tree(feature=feature, threshold_bin=tbin, threshold=threshold, left=left,
                right=right, value=value, count=count)


def fit_arrays(X, y, weights=None, hp: Hyperparams | None = None, seed: int = 0,
               feature_names=None, schema_fingerprint: str = "") -> Ensemble:
    """Fit an :class:`Ensemble` on a dense matrix.

    Sample weights are rescaled to mean one before use, so the model depends
    only on their relative sizes.
    """
    hp = hp or Hyperparams()
    X, y, w = _validate_inputs(X, y, weights)
    if X.shape[0] < hp.min_data_in_leaf:
        raise InvalidInputError(
            f"need at least min_data_in_leaf={hp.min_data_in_leaf} rows, got {X.shape[0]}"
        )
    w = normalize_weights(w)
    n, m = X.shape
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(m)]
    elif len(feature_names) != m:
        raise InvalidInputError("feature_names must match the number of columns")

    edges = fit_bin_edges(X, hp.max_bin)
    binned = apply_bins(X, edges)
    n_bins = np.array([len(e) + 1 for e in edges], dtype=np.int64)
    dominant = np.array([np.bincount(row, minlength=1).argmax() for row in binned], dtype=binned.dtype)

    class_w = np.bincount(y, weights=w, minlength=N_CLASSES)
    base = np.log(np.maximum(class_w / class_w.sum(), PROBA_FLOOR))
    scores = np.tile(base, (n, 1))
    n_bins_max = int(n_bins.max()) if m else 1
    workspace = (np.empty(n, dtype=np.int64), np.zeros((hp.num_leaves, m, n_bins_max, 3)))

    trees: list[list[Tree]] = [[] for _ in range(N_CLASSES)]
    losses = []
    for _ in range(hp.num_iterations):
        grad, hess = softmax_grad_hess(scores, y, w)
        grad = np.ascontiguousarray(grad.T)
        hess = np.ascontiguousarray(hess.T)
        # gradients are fixed for the iteration, so trees may update scores in turn
        for k in range(N_CLASSES):
            trees[k].append(_grow_tree(binned, dominant, n_bins, grad[k], hess[k], hp, edges, workspace, scores, k))
        losses.append(weighted_log_loss(softmax(scores), y, w))

    return Ensemble(
        feature_names=list(feature_names),
        base_scores=base,
        trees=trees,
        hyperparams=hp,
        schema_fingerprint=schema_fingerprint,
        seed=int(seed),
        train_loss=losses,
    )


def fit(matrix, weights=None, hp: Hyperparams | None = None, seed: int = 0) -> Ensemble:
    """Fit on a :class:`~tenderrisk.features.FeatureMatrix` (training columns only)."""
    X, names = matrix.train_view()
    if matrix.labels is None:
        raise InvalidInputError("feature matrix has no labels")
    return fit_arrays(X, matrix.labels, weights, hp, seed, names, matrix.fingerprint)


def predict_proba(ensemble: Ensemble, rows, fingerprint: str | None = None) -> np.ndarray:
    """Class probabilities, shape ``(n, 4)``.

    ``rows`` is a FeatureMatrix (checked against the ensemble's schema
    fingerprint) or a raw array with the training column layout.
    """
    if hasattr(rows, "train_view"):
        fingerprint = rows.fingerprint
        X, _ = rows.train_view()
    else:
        X = np.asarray(rows, dtype=np.float64)
    if fingerprint is not None and ensemble.schema_fingerprint and fingerprint != ensemble.schema_fingerprint:
        raise SchemaError(
            f"schema fingerprint {fingerprint[:12]} does not match model {ensemble.schema_fingerprint[:12]}"
        )
    if X.ndim != 2 or X.shape[1] != ensemble.n_features:
        raise SchemaError(f"expected {ensemble.n_features} feature columns, got {X.shape}")
    return softmax(ensemble.raw_scores(X))


def predict(ensemble: Ensemble, rows) -> np.ndarray:
    return np.argmax(predict_proba(ensemble, rows), axis=1)


def feature_importance(ensemble: Ensemble) -> dict[str, int]:
    """Number of internal nodes splitting on each feature, over all trees."""
    counts = np.zeros(ensemble.n_features, dtype=np.int64)
    for per_class in ensemble.trees:
        for t in per_class:
            f = t.feature[t.feature >= 0]
            counts += np.bincount(f, minlength=ensemble.n_features)
    return {name: int(c) for name, c in zip(ensemble.feature_names, counts)}


def empty_ensemble(n_features: int, base_scores=None, hp: Hyperparams | None = None) -> Ensemble:
    base = np.zeros(N_CLASSES) if base_scores is None else np.asarray(base_scores, dtype=np.float64)
    return Ensemble(
        feature_names=[f"f{j}" for j in range(n_features)],
        base_scores=base,
        trees=[[] for _ in range(N_CLASSES)],
        hyperparams=hp or Hyperparams(num_iterations=0),
    )


def total_internal_nodes(ensemble: Ensemble) -> int:
    return sum(t.n_internal for per_class in ensemble.trees for t in per_class)


def check_probabilities(p: np.ndarray, tol: float = 1e-9) -> bool:
    return bool(np.all(p > 0) and np.allclose(p.sum(axis=1), 1.0, atol=tol, rtol=0) and not math.isnan(p.sum()))
