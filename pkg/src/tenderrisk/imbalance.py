"""Class-weighted training and the search for class weights that maximize a
validation metric (exhaustive grid or Gaussian-process Bayesian optimization).
"""
from __future__ import annotations

import csv
import itertools
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .domain import N_CLASSES, InvalidInputError
from .gbdt import Hyperparams, fit_arrays, predict_proba
from .metrics import AVERAGINGS, METRICS, full_report

BOX = (0.01, 0.99)
N_CANDIDATES = 1024
N_REFINE = 5
NORMALIZED_DECIMALS = 12


@dataclass(frozen=True)
class ClassWeights:
    raw: tuple

    def __post_init__(self):
        raw = tuple(float(v) for v in self.raw)
        if len(raw) != N_CLASSES:
            raise InvalidInputError("class weights need one value per class")
        if not all(0.0 < v < 1.0 for v in raw):
            raise InvalidInputError(f"raw class weights must lie in (0, 1), got {raw}")
        object.__setattr__(self, "raw", raw)

    @property
    def normalized(self) -> np.ndarray:
        r = np.asarray(self.raw)
        # rounding makes every positive multiple of ``raw`` map to identical bits
        return np.round(r / r.sum(), NORMALIZED_DECIMALS)

    @classmethod
    def uniform(cls) -> "ClassWeights":
        return cls((0.25,) * N_CLASSES)

    def to_dict(self) -> dict:
        return {"raw": list(self.raw), "normalized": self.normalized.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassWeights":
        return cls(tuple(d["raw"]))


@dataclass(frozen=True)
class ObjectiveSpec:
    metric: str = "f1"
    averaging: str = "weighted"

    def __post_init__(self):
        if self.metric not in METRICS or self.averaging not in AVERAGINGS:
            raise InvalidInputError(f"unsupported objective {self.metric}/{self.averaging}")


@dataclass
class WeightSearchResult:
    best_weights: ClassWeights
    best_objective: float
    trace: list = field(default_factory=list)

    @property
    def budget_used(self) -> int:
        return len(self.trace)

    def to_dict(self) -> dict:
        return {
            "best_weights": self.best_weights.to_dict(),
            "best_objective": self.best_objective,
            "budget_used": self.budget_used,
        }

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["evaluation", "raw0", "raw1", "raw2", "raw3", "w0", "w1", "w2", "w3", "objective"])
            for i, (cw, obj) in enumerate(self.trace):
                w.writerow([i, *(repr(v) for v in cw.raw), *(repr(float(v)) for v in cw.normalized), repr(obj)])

    def write_best_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_best_weights(path) -> ClassWeights:
    with open(path) as fh:
        return ClassWeights.from_dict(json.load(fh)["best_weights"])


def weighted_loss(losses, weights: ClassWeights) -> float:
    """``sum_i w_i * L_i`` with normalized class weights."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != (N_CLASSES,) or not np.isfinite(losses).all():
        raise InvalidInputError("need 4 finite per-class losses")
    return float(np.dot(weights.normalized, losses))


def sample_weights(y, weights: ClassWeights | None) -> np.ndarray:
    """Per-sample weights ``w_c / pi_c`` rescaled to mean one.

    ``None`` means no class weighting (every sample weighs one).
    """
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise InvalidInputError("empty label vector")
    if weights is None:
        return np.ones(len(y))
    freq = np.bincount(y, minlength=N_CLASSES) / len(y)
    w = weights.normalized[y] / freq[y]
    return w / w.mean()


def train_weighted(X, y, weights: ClassWeights | None, hp: Hyperparams | None = None, seed: int = 0,
                   feature_names=None, schema_fingerprint: str = ""):
    return fit_arrays(X, y, sample_weights(y, weights), hp=hp, seed=seed,
                      feature_names=feature_names, schema_fingerprint=schema_fingerprint)


@dataclass
class Split:
    X: np.ndarray
    y: np.ndarray

    @classmethod
    def from_matrix(cls, matrix) -> "Split":
        X, _ = matrix.train_view()
        return cls(X, matrix.labels)


def make_objective(train: Split, valid: Split, objective: ObjectiveSpec | None = None,
                   hp: Hyperparams | None = None, seed: int = 0) -> Callable[[ClassWeights], float]:
    """Validation score of the model trained with the given class weights."""
    objective = objective or ObjectiveSpec()
    if len(valid.y) == 0:
        raise InvalidInputError("validation split is empty")

    def fn(weights: ClassWeights) -> float:
        model = train_weighted(train.X, train.y, weights, hp=hp, seed=seed)
        report = full_report(valid.y, predict_proba(model, valid.X))
        return float(report.value(objective.metric, objective.averaging))

    return fn


def _result(trace) -> WeightSearchResult:
    # earliest evaluation wins ties
    best = max(range(len(trace)), key=lambda i: (trace[i][1], -i))
    return WeightSearchResult(trace[best][0], trace[best][1], list(trace))


def grid_points(r: int) -> list[ClassWeights]:
    """All weight vectors with components in {1/r, 2/r, ...} summing to one."""
    if r < N_CLASSES:
        raise InvalidInputError("grid resolution must be at least 4")
    points = []
    # compositions of r into 4 positive parts, lexicographic
    for cuts in itertools.combinations(range(1, r), N_CLASSES - 1):
        parts = np.diff((0, *cuts, r))
        points.append(ClassWeights(tuple(p / r for p in parts)))
    return points


def grid_search_fn(fn: Callable[[ClassWeights], float], r: int = 8) -> WeightSearchResult:
    return _result([(w, fn(w)) for w in grid_points(r)])


def grid_search(train: Split, valid: Split, objective: ObjectiveSpec | None = None, r: int = 8,
                hp: Hyperparams | None = None, seed: int = 0) -> WeightSearchResult:
    return grid_search_fn(make_objective(train, valid, objective, hp, seed), r)


def initial_design_size(budget: int) -> int:
    return max(5, budget // 5)


def _expected_improvement(mu, sigma, best, xi=0.01):
    sigma = np.maximum(sigma, 1e-12)
    z = (mu - best - xi) / sigma
    return (mu - best - xi) * norm.cdf(z) + sigma * norm.pdf(z)


def _fit_surrogate(U, f, seed):
    from sklearn.gaussian_process import GaussianProcessRegressor
    from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel

    kernel = (ConstantKernel(1.0, (1e-3, 1e3)) * Matern(length_scale=np.full(U.shape[1], 0.5),
                                                         length_scale_bounds=(1e-2, 1e2), nu=2.5)
              + WhiteKernel(1e-2, (1e-8, 1.0)))
    gp = GaussianProcessRegressor(kernel=kernel, normalize_y=False, n_restarts_optimizer=2,
                                  random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        gp.fit(U, f)
    return gp


def bayes_opt_fn(fn: Callable[[ClassWeights], float], budget: int = 35, seed: int = 0) -> WeightSearchResult:
    """Maximize ``fn`` over raw weights in the box ``(0.01, 0.99)^4``.

    Space-filling start, then a Matern-5/2 GP with fitted noise on unit-box
    inputs and standardized outputs; each step evaluates the maximizer of
    expected improvement found from random candidates plus local refinement.
    """
    n_init = initial_design_size(budget)
    if budget < n_init:
        raise InvalidInputError(f"budget {budget} is below the initial design size {n_init}")
    lo, hi = BOX
    rng = np.random.default_rng(seed)
    sampler = qmc.LatinHypercube(d=N_CLASSES, seed=rng)

    def to_weights(u):
        return ClassWeights(tuple(lo + (hi - lo) * float(np.clip(v, 0.0, 1.0)) for v in u))

    U = [np.asarray(u) for u in sampler.random(n_init)]
    trace = [(to_weights(u), fn(to_weights(u))) for u in U]
    while len(trace) < budget:
        f = np.array([t[1] for t in trace])
        sd = f.std()
        fz = (f - f.mean()) / sd if sd > 0 else f - f.mean()
        gp = _fit_surrogate(np.array(U), fz, int(rng.integers(2**31)))
        best = fz.max()

        def neg_ei(u):
            mu, s = gp.predict(np.atleast_2d(u), return_std=True)
            return -_expected_improvement(mu, s, best)

        cand = rng.random((N_CANDIDATES, N_CLASSES))
        ei = -neg_ei(cand)
        starts = cand[np.argsort(-ei, kind="stable")[:N_REFINE]]
        best_u, best_ei = starts[0], ei.max()
        for s0 in starts:
            res = minimize(lambda u: float(neg_ei(u)[0]), s0, method="L-BFGS-B",
                           bounds=[(0.0, 1.0)] * N_CLASSES, options={"maxiter": 50})
            if -res.fun > best_ei:
                best_u, best_ei = np.clip(res.x, 0.0, 1.0), -res.fun
        U.append(np.asarray(best_u))
        w = to_weights(best_u)
        trace.append((w, fn(w)))
    return _result(trace)


def bayes_opt(train: Split, valid: Split, objective: ObjectiveSpec | None = None, budget: int = 35,
              seed: int = 0, hp: Hyperparams | None = None, model_seed: int = 0) -> WeightSearchResult:
    return bayes_opt_fn(make_objective(train, valid, objective, hp, model_seed), budget, seed)
