"""Feature engineering: temporal features, historical rates, ordered target
encoding of categoricals, median imputation and the fitted featurizer.

All statistics are fitted on training rows only and every feature of a row
dated ``t`` is computed from information dated before ``t`` (plus the row's own
snapshot).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numba import njit

from .domain import CATEGORICAL, KEY_COLUMNS, N_CLASSES, InvalidInputError, SchemaError, column_kinds, is_missing

STATIC_NUMERIC = "static-numeric"
STATIC_CATEGORICAL = "static-categorical"
TEMPORAL = "temporal"
DERIVED_RATE = "derived-rate"
KINDS = (STATIC_NUMERIC, STATIC_CATEGORICAL, TEMPORAL, DERIVED_RATE)

MISSING_LEVEL = "MISSING"
NO_HISTORY_RATE = 1.0 / N_CLASSES

TEMPORAL_FEATURES = (
    "stage_status",
    "weeks_active",
    "weeks_in_stage_1",
    "weeks_in_stage_2",
    "weeks_in_stage_3",
    "weeks_in_stage_4",
    "weeks_in_stage_5",
    "weeks_in_stage_6",
    "deal_value_rel_change",
    "deal_value_max_abs_change",
    "update_frequency",
)


# --------------------------------------------------------------------------
# temporal features
# --------------------------------------------------------------------------

@njit(cache=True)
def _temporal_kernel(new_group, days, stages, deal):
    n = days.shape[0]
    out = np.empty((n, 11))
    stage_weeks = np.zeros(6)
    first_day = 0.0
    count = 0
    first_val = np.nan
    last_val = np.nan
    max_abs = 0.0
    for i in range(n):
        if new_group[i]:
            stage_weeks[:] = 0.0
            first_day = days[i]
            count = 0
            first_val = np.nan
            last_val = np.nan
            max_abs = 0.0
        elif i > 0:
            # previous snapshot's stage lasted until this snapshot
            s_prev = stages[i - 1]
            if 1 <= s_prev <= 6:
                stage_weeks[s_prev - 1] += (days[i] - days[i - 1]) / 7.0
        count += 1
        v = deal[i]
        if not np.isnan(v):
            if np.isnan(first_val):
                first_val = v
            else:
                d = abs(v - last_val)
                if d > max_abs:
                    max_abs = d
            last_val = v
        weeks_active = (days[i] - first_day) / 7.0
        out[i, 0] = stages[i]
        out[i, 1] = weeks_active
        for k in range(6):
            out[i, 2 + k] = stage_weeks[k]
        s = stages[i]
        if 1 <= s <= 6:
            out[i, 2 + s - 1] += 1.0
        if np.isnan(first_val):
            out[i, 8] = np.nan
            out[i, 9] = np.nan
        else:
            out[i, 8] = (last_val - first_val) / first_val if first_val != 0 else 0.0
            out[i, 9] = max_abs
        out[i, 10] = count / max(weeks_active, 1.0)
    return out


def _temporal_matrix(frame: pd.DataFrame) -> np.ndarray:
    """Temporal features for a frame sorted by (opportunity_id, record_date)."""
    ids = frame["opportunity_id"].to_numpy()
    new_group = np.ones(len(frame), dtype=np.bool_)
    if len(frame) > 1:
        new_group[1:] = ids[1:] != ids[:-1]
    days = (frame["record_date"].to_numpy("datetime64[D]").astype(np.int64)).astype(np.float64)
    stages = frame["sales_stage"].to_numpy(np.int64)
    if "deal_value" in frame.columns:
        deal = frame["deal_value"].to_numpy(np.float64)
    else:
        deal = np.full(len(frame), np.nan)
    return _temporal_kernel(new_group, days, stages, deal)


def build_temporal_features(history: pd.DataFrame) -> dict[str, float]:
    """Temporal features of an opportunity at the date of its latest snapshot.

    ``history`` holds one opportunity's snapshots up to and including ``t``.
    Weeks are elapsed time (a single snapshot has ``weeks_active == 0``); the
    weeks spent in a stage count the gap to the next snapshot, and the
    current snapshot contributes one week to its own stage.
    """
    if len(history) == 0:
        raise InvalidInputError("history is empty")
    if history["opportunity_id"].nunique() != 1:
        raise InvalidInputError("history must belong to a single opportunity")
    h = history.sort_values("record_date", kind="stable")
    if h["record_date"].duplicated().any():
        raise InvalidInputError("history has duplicate record dates")
    row = _temporal_matrix(h)[-1]
    return {name: float(v) for name, v in zip(TEMPORAL_FEATURES, row)}


# --------------------------------------------------------------------------
# historical rates
# --------------------------------------------------------------------------

class HistoricalRates:
    """Win rate per entity from closures strictly before a query date.

    Built from labeled rows carrying ``label`` and ``close_date``. Each
    opportunity counts once, under its first non-missing entity value.
    """

    def __init__(self, labeled: pd.DataFrame, entity_column: str):
        self.entity_column = entity_column
        opp = (
            labeled[["opportunity_id", entity_column, "label", "close_date"]]
            .dropna(subset=[entity_column])
            .drop_duplicates("opportunity_id")
        )
        all_opp = labeled[["opportunity_id", "label", "close_date"]].drop_duplicates("opportunity_id")
        self._global_dates, self._global_wins = self._cumulate(all_opp)
        self._by_entity = {}
        for entity, grp in opp.groupby(entity_column, sort=True):
            self._by_entity[entity] = self._cumulate(grp)

    @staticmethod
    def _cumulate(grp):
        order = np.argsort(grp["close_date"].to_numpy("datetime64[ns]"), kind="stable")
        dates = grp["close_date"].to_numpy("datetime64[ns]")[order]
        wins = np.concatenate([[0], np.cumsum(grp["label"].to_numpy()[order] == 0)])
        return dates, wins

    def prior(self, as_of) -> float:
        as_of = np.datetime64(pd.Timestamp(as_of), "ns")
        k = np.searchsorted(self._global_dates, as_of, side="left")
        return float(self._global_wins[k] / k) if k else NO_HISTORY_RATE

    def rates(self, as_of) -> dict:
        """Rate per known entity as of one date; entities without history get the prior."""
        as_of = np.datetime64(pd.Timestamp(as_of), "ns")
        prior = self.prior(as_of)
        out = {}
        for entity, (dates, wins) in self._by_entity.items():
            k = np.searchsorted(dates, as_of, side="left")
            out[entity] = float(wins[k] / k) if k else prior
        return out

    def lookup(self, entities, dates) -> np.ndarray:
        """Rate for each (entity, as-of date) query pair."""
        entities = np.asarray(entities, dtype=object)
        dates = np.asarray(pd.to_datetime(np.asarray(dates)), dtype="datetime64[ns]")
        k_all = np.searchsorted(self._global_dates, dates, side="left")
        with np.errstate(invalid="ignore", divide="ignore"):
            prior = np.where(k_all > 0, self._global_wins[k_all] / np.maximum(k_all, 1), NO_HISTORY_RATE)
        out = prior.copy()
        missing = np.array([is_missing(e) for e in entities], dtype=bool)
        present = np.flatnonzero(~missing)
        if len(present):
            ent = pd.Series(entities[present])
            for entity, idx in ent.groupby(ent, sort=False).indices.items():
                hist = self._by_entity.get(entity)
                if hist is None:
                    continue
                rows = present[idx]
                k = np.searchsorted(hist[0], dates[rows], side="left")
                has = k > 0
                out[rows[has]] = hist[1][k[has]] / k[has]
        return out


def build_historical_rates(labeled: pd.DataFrame, entity_column: str, as_of) -> tuple[dict, float]:
    """Win rate per entity among opportunities closed strictly before ``as_of``.

    Returns ``(rates, prior)``; entities with no closures before ``as_of``
    receive ``prior``, the global rate over the same window.
    """
    table = HistoricalRates(labeled, entity_column)
    return table.rates(as_of), table.prior(as_of)


# --------------------------------------------------------------------------
# ordered target encoding
# --------------------------------------------------------------------------

def _kmeans_1d(values: np.ndarray, k: int, n_iter: int = 100) -> np.ndarray:
    """Sorted cluster centers of 1-D Lloyd's k-means with quantile start."""
    uniq = np.unique(values)
    k = min(k, len(uniq))
    centers = np.quantile(values, (np.arange(k) + 0.5) / k)
    centers = np.unique(centers)
    for _ in range(n_iter):
        assign = _nearest(values, centers)
        new = np.array([values[assign == j].mean() if np.any(assign == j) else centers[j] for j in range(len(centers))])
        new = np.unique(new)
        if len(new) == len(centers) and np.array_equal(new, centers):
            break
        centers = new
    return centers


def _nearest(values: np.ndarray, centers: np.ndarray) -> np.ndarray:
    if len(centers) == 1:
        return np.zeros(len(values), dtype=np.int64)
    mids = (centers[:-1] + centers[1:]) / 2.0
    return np.searchsorted(mids, values, side="left")


@dataclass
class OrderedTargetEncoder:
    """Per-class ordered target statistics for one categorical column.

    ``train_encoding`` holds the prefix-only statistics of the fitting rows
    (in their original order). :meth:`transform` encodes new rows from the
    statistics of all fitting rows.
    """

    categories: list
    counts: np.ndarray
    prior: np.ndarray
    prior_strength: float
    permutation: np.ndarray
    train_encoding: np.ndarray
    cluster_centers: np.ndarray | None = None
    category_cluster: dict = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return 0 if self.cluster_centers is None else len(self.cluster_centers)

    def _index(self, values) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.categories)}
        return np.array([lookup.get(v, -1) for v in values], dtype=np.int64)

    def category_vectors(self) -> np.ndarray:
        a = self.prior_strength
        totals = self.counts.sum(axis=1, keepdims=True)
        return (self.counts + a * self.prior) / (totals + a)

    def transform(self, values) -> np.ndarray:
        idx = self._index(values)
        vecs = np.vstack([self.category_vectors(), self.prior[None, :]])
        return vecs[idx]

    def clusters(self, values) -> np.ndarray:
        """Cluster id per value; unseen categories use the prior's cluster."""
        if self.cluster_centers is None:
            raise ValueError("encoder was fitted without clusters")
        fallback = int(_nearest(self.prior[:1], self.cluster_centers)[0])
        return np.array([self.category_cluster.get(v, fallback) for v in values], dtype=np.int64)

    def cluster_onehot(self, values) -> np.ndarray:
        ids = self.clusters(values)
        out = np.zeros((len(ids), self.n_clusters))
        out[np.arange(len(ids)), ids] = 1.0
        return out


def fit_ordered_encoder(values, labels, permutation_seed: int, prior_strength: float = 1.0,
                        cluster_count: int | None = 16, prior=None, groups=None) -> OrderedTargetEncoder:
    """Fit ordered target statistics for one categorical column.

    Rows are visited in a seeded random permutation. Row ``i`` is encoded per
    class ``k`` as ``(n_k + a * prior_k) / (n + a)`` where ``n`` and ``n_k``
    count the earlier rows of the same category (all classes / class k).

    When ``groups`` (e.g. record dates) is given, the permutation is ordered
    by group first and only rows of strictly earlier groups count as
    earlier. The prior defaults to uniform so that no row's own label can
    reach its encoding.
    """
    values = np.asarray(values, dtype=object)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(values)
    if labels.shape != (n,):
        raise InvalidInputError("values and labels must have the same length")
    if not prior_strength > 0:
        raise InvalidInputError("prior strength must be positive")
    if cluster_count is not None and cluster_count < 1:
        raise InvalidInputError("cluster_count must be >= 1")
    if n and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise InvalidInputError("labels must be class ids 0..3")
    prior = np.full(N_CLASSES, 1.0 / N_CLASSES) if prior is None else np.asarray(prior, dtype=np.float64)
    filled = np.array([MISSING_LEVEL if is_missing(v) else v for v in values], dtype=object)
    categories = sorted(set(filled.tolist()), key=str)
    cat_index = {c: i for i, c in enumerate(categories)}
    codes = np.array([cat_index[v] for v in filled], dtype=np.int64)

    rng = np.random.default_rng(permutation_seed)
    perm = rng.permutation(n)
    if groups is not None:
        g = np.asarray(groups)
        if len(g) != n:
            raise InvalidInputError("groups must align with values")
        perm = perm[np.argsort(g[perm], kind="stable")]
    position = np.empty(n, dtype=np.int64)
    position[perm] = np.arange(n)

    onehot = np.zeros((n, N_CLASSES))
    onehot[np.arange(n), labels] = 1.0
    # rows grouped by category, each group in permutation order
    order = np.lexsort((position, codes))
    oh = onehot[order]
    cs = np.cumsum(oh, axis=0) - oh
    c_sorted = codes[order]
    starts = np.flatnonzero(np.r_[True, c_sorted[1:] != c_sorted[:-1]])
    group_id = np.cumsum(np.r_[True, c_sorted[1:] != c_sorted[:-1]]) - 1
    prev = cs - cs[starts][group_id]
    if groups is not None:
        # rows sharing a group (date) with earlier rows must not see them
        gs = np.asarray(groups)[order]
        tie = np.r_[False, (gs[1:] == gs[:-1]) & (c_sorted[1:] == c_sorted[:-1])]
        block_start = np.maximum.accumulate(np.where(~tie, np.arange(n), 0))
        prev = prev[block_start]
    counts_prev = np.empty_like(prev)
    counts_prev[order] = prev
    a = float(prior_strength)
    encoding = (counts_prev + a * prior) / (counts_prev.sum(axis=1, keepdims=True) + a)

    counts = np.zeros((len(categories), N_CLASSES))
    np.add.at(counts, codes, onehot)
    enc = OrderedTargetEncoder(
        categories=categories,
        counts=counts,
        prior=prior,
        prior_strength=a,
        permutation=perm,
        train_encoding=encoding,
    )
    if cluster_count is not None and categories:
        win = enc.category_vectors()[:, 0]
        centers = _kmeans_1d(win, cluster_count)
        enc.cluster_centers = centers
        enc.category_cluster = dict(zip(categories, _nearest(win, centers).tolist()))
    return enc


# --------------------------------------------------------------------------
# imputation
# --------------------------------------------------------------------------

class MedianImputer:
    """Fills NaNs with per-column medians of the fitting rows."""

    def fit(self, X: np.ndarray, names) -> "MedianImputer":
        X = np.asarray(X, dtype=np.float64)
        all_missing = np.isnan(X).all(axis=0) if len(X) else np.ones(X.shape[1], dtype=bool)
        if all_missing.any():
            bad = [names[j] for j in np.flatnonzero(all_missing)]
            raise SchemaError(f"column(s) entirely missing in training rows: {bad}")
        self.medians_ = np.nanmedian(X, axis=0)
        self.names_ = list(names)
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=np.float64, copy=True)
        rows, cols = np.nonzero(np.isnan(X))
        X[rows, cols] = self.medians_[cols]
        return X


def impute(X: np.ndarray, train_mask, names=None) -> np.ndarray:
    """Median-impute ``X`` with statistics from the rows selected by ``train_mask``."""
    X = np.asarray(X, dtype=np.float64)
    names = names or [f"col{j}" for j in range(X.shape[1])]
    imp = MedianImputer().fit(X[np.asarray(train_mask)], names)
    return imp.transform(X)


# --------------------------------------------------------------------------
# schema and feature matrix
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    source: str | None = None
    encoder: dict | None = None


@dataclass
class FeatureSchema:
    columns: list[ColumnSpec]
    non_train: set = field(default_factory=set)

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("feature schema has duplicate column names")
        unknown = set(self.non_train) - set(names)
        if unknown:
            raise SchemaError(f"non_train names not in schema: {sorted(unknown)}")
        for c in self.columns:
            if c.kind not in KINDS:
                raise SchemaError(f"column {c.name} has unknown kind {c.kind!r}")
            if c.kind == STATIC_CATEGORICAL and (not c.encoder or c.encoder.get("type") != "ordered"):
                raise SchemaError(f"categorical column {c.name} must bind an ordered encoder")
            if c.kind == DERIVED_RATE and not c.source:
                raise SchemaError(f"rate column {c.name} needs a source entity column")
            if c.kind == TEMPORAL and c.name not in TEMPORAL_FEATURES:
                raise SchemaError(f"unknown temporal feature {c.name}")

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            d = {"name": c.name, "kind": c.kind}
            if c.source:
                d["source"] = c.source
            if c.encoder:
                d["encoder"] = dict(c.encoder)
            cols.append(d)
        return {"version": 1, "columns": cols, "non_train": sorted(self.non_train)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        cols = [ColumnSpec(c["name"], c["kind"], c.get("source"), c.get("encoder")) for c in d["columns"]]
        return cls(cols, set(d.get("non_train", [])))

    @classmethod
    def from_json(cls, path) -> "FeatureSchema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def fingerprint(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def without(self, names) -> "FeatureSchema":
        """Schema with the given raw columns removed."""
        names = set(names)
        return FeatureSchema([c for c in self.columns if c.name not in names], set(self.non_train) - names)


HIGH_CARDINALITY = 32


def default_schema(frame: pd.DataFrame, cluster_count: int = 16, prior_strength: float = 1.0) -> FeatureSchema:
    """Schema covering every attribute of a snapshot frame plus the
    temporal features and win rates for client, seller and product columns.

    Identifier and segment columns are kept in the schema but marked as
    non-train. High-cardinality categoricals get a cluster block.
    """
    derived = {"label", "close_date", "quarter", *TEMPORAL_FEATURES}
    kinds = column_kinds(frame.drop(columns=[c for c in frame.columns if c in derived]))
    cols = [
        ColumnSpec(name, STATIC_CATEGORICAL, encoder={"type": "ordered", "prior_strength": prior_strength, "cluster_count": None})
        for name in ("opportunity_id", "business_unit", "geography")
    ]
    for name, kind in kinds.items():
        if kind == CATEGORICAL:
            card = frame[name].nunique(dropna=True)
            cc = cluster_count if card >= HIGH_CARDINALITY else None
            cols.append(ColumnSpec(name, STATIC_CATEGORICAL,
                                   encoder={"type": "ordered", "prior_strength": prior_strength, "cluster_count": cc}))
        else:
            cols.append(ColumnSpec(name, STATIC_NUMERIC))
    cols.extend(ColumnSpec(name, TEMPORAL) for name in TEMPORAL_FEATURES)
    for entity in ("client_id", "seller_id", "product"):
        if entity in kinds:
            cols.append(ColumnSpec(f"{entity}_win_rate", DERIVED_RATE, source=entity))
    return FeatureSchema(cols, {"opportunity_id", "business_unit", "geography"})


@dataclass
class FeatureMatrix:
    values: np.ndarray
    columns: list[str]
    train_mask: np.ndarray
    labels: np.ndarray | None
    opportunity_id: np.ndarray
    record_date: np.ndarray
    fingerprint: str

    @property
    def shape(self):
        return self.values.shape

    def train_view(self) -> tuple[np.ndarray, list[str]]:
        cols = [c for c, keep in zip(self.columns, self.train_mask) if keep]
        return self.values[:, self.train_mask], cols

    def save(self, path) -> None:
        meta = {"columns": self.columns, "fingerprint": self.fingerprint}
        np.savez(
            path,
            values=self.values,
            train_mask=self.train_mask,
            labels=self.labels if self.labels is not None else np.empty(0, dtype=np.int64),
            opportunity_id=self.opportunity_id.astype(str),
            record_date=self.record_date.astype("datetime64[ns]").astype(np.int64),
            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        )

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        with np.load(path, allow_pickle=False) as d:
            meta = json.loads(bytes(d["meta"]).decode())
            labels = d["labels"]
            return cls(
                values=d["values"],
                columns=meta["columns"],
                train_mask=d["train_mask"],
                labels=labels if len(labels) == len(d["values"]) else None,
                opportunity_id=d["opportunity_id"].astype(object),
                record_date=d["record_date"].astype("datetime64[ns]"),
                fingerprint=meta["fingerprint"],
            )


def sort_for_features(frame: pd.DataFrame) -> pd.DataFrame:
    order = np.lexsort((frame["record_date"].to_numpy(), frame["opportunity_id"].to_numpy()))
    return frame.iloc[order].reset_index(drop=True)


def add_temporal_features(labeled: pd.DataFrame) -> pd.DataFrame:
    """Append the temporal feature columns to a labeled frame.

    Each row only sees earlier snapshots of its own opportunity, so the
    result is fold-independent and can be computed once per dataset.
    """
    frame = sort_for_features(labeled)
    tm = _temporal_matrix(frame)
    for j, name in enumerate(TEMPORAL_FEATURES):
        frame[name] = tm[:, j]
    return frame


class Featurizer:
    """Fits imputation, encoders and rate tables on training rows.

    Input frames are labeled frames that already carry the temporal feature
    columns (see :func:`add_temporal_features`).
    """

    def __init__(self, schema: FeatureSchema, seed: int = 0):
        self.schema = schema
        self.seed = int(seed)

    def _output_names(self):
        names, train = [], []
        for c in self.schema.columns:
            keep = c.name not in self.schema.non_train
            if c.kind == STATIC_CATEGORICAL:
                block = [f"{c.name}__te{k}" for k in range(N_CLASSES)]
                block += [f"{c.name}__cl{j}" for j in range(self.encoders_[c.name].n_clusters)]
            else:
                block = [c.name]
            names.extend(block)
            train.extend([keep] * len(block))
        return names, np.array(train, dtype=bool)

    def _check_columns(self, frame):
        for c in self.schema.columns:
            src = c.source if c.kind == DERIVED_RATE else c.name
            if src not in frame.columns:
                raise SchemaError(f"frame lacks column {src!r} required by the feature schema")

    def fit(self, train: pd.DataFrame) -> "Featurizer":
        self.fit_transform(train)
        return self

    def fit_transform(self, train: pd.DataFrame) -> FeatureMatrix:
        self._check_columns(train)
        if len(train) == 0:
            raise InvalidInputError("cannot fit a featurizer on zero rows")
        labels = train["label"].to_numpy(np.int64)
        dates = train["record_date"].to_numpy("datetime64[ns]").astype(np.int64)
        self.encoders_ = {}
        self.rates_ = {}
        blocks = {}
        for i, c in enumerate(self.schema.columns):
            if c.kind == STATIC_CATEGORICAL:
                enc = fit_ordered_encoder(
                    train[c.name].to_numpy(object), labels,
                    permutation_seed=(self.seed * 1_000_003 + i) % (2**63),
                    prior_strength=float(c.encoder.get("prior_strength", 1.0)),
                    cluster_count=c.encoder.get("cluster_count"),
                    groups=dates,
                )
                self.encoders_[c.name] = enc
                block = enc.train_encoding
                if enc.n_clusters:
                    block = np.hstack([block, enc.cluster_onehot(_filled(train[c.name]))])
                blocks[c.name] = block
            elif c.kind == DERIVED_RATE:
                self.rates_[c.name] = HistoricalRates(train, c.source)
        numeric = self._numeric_block(train)
        num_names = [c.name for c in self.schema.columns if c.kind != STATIC_CATEGORICAL]
        self.imputer_ = MedianImputer().fit(numeric, num_names)
        self.names_, self.train_mask_ = self._output_names()
        return self._assemble(train, blocks, self.imputer_.transform(numeric))

    def _numeric_block(self, frame):
        cols = []
        for c in self.schema.columns:
            if c.kind in (STATIC_NUMERIC, TEMPORAL):
                cols.append(pd.to_numeric(frame[c.name], errors="coerce").to_numpy(np.float64))
            elif c.kind == DERIVED_RATE:
                cols.append(self.rates_[c.name].lookup(frame[c.source].to_numpy(object), frame["record_date"].to_numpy()))
        return np.column_stack(cols) if cols else np.empty((len(frame), 0))

    def transform(self, frame: pd.DataFrame) -> FeatureMatrix:
        self._check_columns(frame)
        blocks = {}
        for c in self.schema.columns:
            if c.kind == STATIC_CATEGORICAL:
                enc = self.encoders_[c.name]
                vals = _filled(frame[c.name])
                block = enc.transform(vals)
                if enc.n_clusters:
                    block = np.hstack([block, enc.cluster_onehot(vals)])
                blocks[c.name] = block
        return self._assemble(frame, blocks, self.imputer_.transform(self._numeric_block(frame)))

    def _assemble(self, frame, blocks, numeric) -> FeatureMatrix:
        parts = []
        j = 0
        for c in self.schema.columns:
            if c.kind == STATIC_CATEGORICAL:
                parts.append(blocks[c.name])
            else:
                parts.append(numeric[:, j:j + 1])
                j += 1
        values = np.hstack(parts) if parts else np.empty((len(frame), 0))
        train_names = [n for n, k in zip(self.names_, self.train_mask_) if k]
        fp = hashlib.sha256((self.schema.fingerprint() + "|" + ",".join(train_names)).encode()).hexdigest()
        labels = frame["label"].to_numpy(np.int64) if "label" in frame.columns else None
        return FeatureMatrix(
            values=np.ascontiguousarray(values, dtype=np.float64),
            columns=list(self.names_),
            train_mask=self.train_mask_.copy(),
            labels=labels,
            opportunity_id=frame["opportunity_id"].to_numpy(object),
            record_date=frame["record_date"].to_numpy("datetime64[ns]"),
            fingerprint=fp,
        )


def _filled(col: pd.Series) -> np.ndarray:
    return np.array([MISSING_LEVEL if is_missing(v) else v for v in col.to_numpy(object)], dtype=object)


def raw_columns_for(schema: FeatureSchema) -> list[str]:
    cols = set(KEY_COLUMNS) | {"label", "close_date"}
    for c in schema.columns:
        cols.add(c.source if c.kind == DERIVED_RATE else c.name)
    return sorted(cols)
