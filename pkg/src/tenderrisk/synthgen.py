"""Deterministic synthetic generator of CRM-like weekly opportunity snapshots.

Each synthetic opportunity draws a latent outcome class from its segment's
mixture, walks monotonically through open sales stages with geometric dwell
times, and ends in exactly one closed snapshot whose stage encodes the class.
Attributes carry class-conditional shifts so that outcomes are learnable.

Config JSON layout (all keys except ``segments`` optional)::

    {
      "seed": 7,
      "segments": [{"business_unit": "BU2", "geography": "GEO4",
                    "opportunity_count": 5000,
                    "class_mixture": [0.68, 0.21, 0.08, 0.03]}],
      "quarters_span": 11,
      "start_date": "2017-01-02",
      "mean_lifetime_weeks": 16.0,
      "missing_rate": 0.05,
      "signal_strength": 1.0,
      "update_rate": 0.85,
      "inflight_fraction": 0.05,
      "attribute_schema": [{"name": "client_id", "kind": "cat", "cardinality": 400},
                           {"name": "attr_01", "kind": "num", "mean": 0.0, "std": 1.0,
                            "informative": false}]
    }
"""
from __future__ import annotations

import datetime as _dt
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .domain import KEY_COLUMNS, CATEGORICAL, NUMERIC, InvalidInputError, SegmentKey, N_CLASSES
from .seeding import derive_seed


class InvalidConfigError(InvalidInputError):
    pass


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str
    cardinality: int = 0
    mean: float = 0.0
    std: float = 1.0
    informative: bool = True


@dataclass(frozen=True)
class SegmentSpec:
    key: SegmentKey
    opportunity_count: int
    class_mixture: tuple[float, float, float, float]


def default_attribute_schema(n_extra_numeric: int = 12, n_noise: int = 4) -> list[AttributeSpec]:
    """Default CRM-like attribute list: categoricals, numerics and pure noise."""
    schema = [
        AttributeSpec("owning_org", CATEGORICAL, cardinality=8),
        AttributeSpec("client_geography", CATEGORICAL, cardinality=6, informative=False),
        AttributeSpec("client_market", CATEGORICAL, cardinality=12),
        AttributeSpec("client_id", CATEGORICAL, cardinality=400),
        AttributeSpec("seller_id", CATEGORICAL, cardinality=150),
        AttributeSpec("product", CATEGORICAL, cardinality=40),
        AttributeSpec("deal_value", NUMERIC, mean=13.0, std=1.0),
        AttributeSpec("line_items", NUMERIC, mean=6.0, std=1.0),
        AttributeSpec("competitors", NUMERIC, mean=2.0, std=1.0),
    ]
    for i in range(n_extra_numeric):
        schema.append(AttributeSpec(f"attr_{i + 1:02d}", NUMERIC, mean=0.0, std=1.0, informative=i % 2 == 0))
    for i in range(n_noise):
        schema.append(AttributeSpec(f"noise_{i + 1:02d}", NUMERIC, mean=0.0, std=1.0, informative=False))
    return schema


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int
    segments: tuple[SegmentSpec, ...]
    quarters_span: int = 11
    start_date: _dt.date = _dt.date(2017, 1, 2)
    mean_lifetime_weeks: float = 16.0
    missing_rate: float = 0.0
    signal_strength: float = 1.0
    update_rate: float = 0.85
    inflight_fraction: float = 0.05
    attribute_schema: tuple[AttributeSpec, ...] = field(default_factory=lambda: tuple(default_attribute_schema()))

    def validate(self) -> None:
        if not self.segments:
            raise InvalidConfigError("config has an empty segment list")
        seen = set()
        for seg in self.segments:
            if seg.opportunity_count <= 0:
                raise InvalidConfigError(f"segment {seg.key} has zero opportunities")
            mix = np.asarray(seg.class_mixture, dtype=float)
            if mix.shape != (N_CLASSES,) or (mix < 0).any() or abs(mix.sum() - 1.0) > 1e-9:
                raise InvalidConfigError(f"segment {seg.key} class_mixture must be 4 non-negative values summing to 1")
            if seg.key in seen:
                raise InvalidConfigError(f"segment {seg.key} listed twice")
            seen.add(seg.key)
        if self.quarters_span < 1:
            raise InvalidConfigError("quarters_span must be positive")
        if not self.mean_lifetime_weeks > 0:
            raise InvalidConfigError("mean_lifetime_weeks must be positive")
        if not 0 <= self.missing_rate < 1:
            raise InvalidConfigError("missing_rate must lie in [0, 1)")
        if not 0 < self.update_rate <= 1:
            raise InvalidConfigError("update_rate must lie in (0, 1]")
        if not 0 <= self.inflight_fraction < 1:
            raise InvalidConfigError("inflight_fraction must lie in [0, 1)")
        names = [a.name for a in self.attribute_schema]
        if len(set(names)) != len(names) or set(names) & set(KEY_COLUMNS):
            raise InvalidConfigError("attribute names must be unique and distinct from key columns")
        for a in self.attribute_schema:
            if a.kind not in (NUMERIC, CATEGORICAL):
                raise InvalidConfigError(f"attribute {a.name} has unknown kind {a.kind!r}")
            if a.kind == CATEGORICAL and a.cardinality < 1:
                raise InvalidConfigError(f"categorical attribute {a.name} needs cardinality >= 1")

    # -- JSON ---------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "segments": [
                {
                    "business_unit": s.key.business_unit,
                    "geography": s.key.geography,
                    "opportunity_count": int(s.opportunity_count),
                    "class_mixture": [float(x) for x in s.class_mixture],
                }
                for s in self.segments
            ],
            "quarters_span": self.quarters_span,
            "start_date": self.start_date.isoformat(),
            "mean_lifetime_weeks": self.mean_lifetime_weeks,
            "missing_rate": self.missing_rate,
            "signal_strength": self.signal_strength,
            "update_rate": self.update_rate,
            "inflight_fraction": self.inflight_fraction,
            "attribute_schema": [asdict(a) for a in self.attribute_schema],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        try:
            segments = tuple(
                SegmentSpec(
                    SegmentKey(str(s["business_unit"]), str(s["geography"])),
                    int(s["opportunity_count"]),
                    tuple(float(x) for x in s["class_mixture"]),
                )
                for s in d["segments"]
            )
        except (KeyError, TypeError) as exc:
            raise InvalidConfigError(f"malformed segment entry: {exc}") from None
        kwargs = {k: d[k] for k in ("quarters_span", "mean_lifetime_weeks", "missing_rate",
                                     "signal_strength", "update_rate", "inflight_fraction") if k in d}
        if "start_date" in d:
            kwargs["start_date"] = _dt.date.fromisoformat(d["start_date"])
        if "attribute_schema" in d:
            kwargs["attribute_schema"] = tuple(AttributeSpec(**a) for a in d["attribute_schema"])
        cfg = cls(seed=int(d.get("seed", 0)), segments=segments, **kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "GeneratorConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# class-dependent stage paths: (lowest first stage, furthest open stage range)
_FURTHEST_STAGE = {
    0: (5, 6),
    1: (2, 3),
    2: (3, 5),
    3: (4, 6),
}
_LIFETIME_FACTOR = np.array([1.2, 0.6, 0.9, 1.0])
_DEAL_DRIFT = np.array([0.004, -0.006, -0.002, 0.0])
# share of opportunities (at signal strength 1) whose stage path follows its class
_PATH_SIGNAL = 0.5


class _Effects:
    """Class-conditional effect sizes, shared by all segments of a config."""

    def __init__(self, config: GeneratorConfig):
        rng = np.random.default_rng(derive_seed(config.seed, "synthgen", "effects"))
        s = config.signal_strength
        self.shift = {}
        self.cat_probs = {}
        for a in config.attribute_schema:
            if a.kind == NUMERIC:
                z = rng.standard_normal(N_CLASSES) if a.informative else np.zeros(N_CLASSES)
                self.shift[a.name] = s * z
            else:
                base = rng.dirichlet(np.full(a.cardinality, 2.0))
                z = rng.standard_normal((N_CLASSES, a.cardinality)) if a.informative else np.zeros((N_CLASSES, a.cardinality))
                p = base[None, :] * np.exp(0.6 * s * z)
                self.cat_probs[a.name] = p / p.sum(axis=1, keepdims=True)
        if "competitors" in self.shift:
            # losing to a rival goes with crowded tenders
            self.shift["competitors"] = self.shift["competitors"] + s * np.array([-0.3, 0.0, 0.0, 0.8])


def _generate_segment(config: GeneratorConfig, seg: SegmentSpec, effects: _Effects) -> pd.DataFrame:
    rng = np.random.default_rng(derive_seed(config.seed, "synthgen", "segment", str(seg.key)))
    span_weeks = config.quarters_span * 13
    start = pd.Timestamp(config.start_date)
    mix = np.asarray(seg.class_mixture, dtype=float)
    n_closed = seg.opportunity_count
    n_inflight = int(round(config.inflight_fraction * n_closed))
    n_total = n_closed + n_inflight
    classes = rng.choice(N_CLASSES, size=n_total, p=mix / mix.sum())

    # per-opportunity attribute draws
    attrs = {}
    for a in config.attribute_schema:
        if a.kind == CATEGORICAL:
            probs = effects.cat_probs[a.name][classes]
            u = rng.random(n_total)[:, None]
            idx = (u > np.cumsum(probs, axis=1)).sum(axis=1)
            idx = np.minimum(idx, a.cardinality - 1)
            width = len(str(a.cardinality - 1))
            attrs[a.name] = np.array([f"{a.name[:3].upper()}{i:0{width}d}" for i in idx], dtype=object)
        else:
            shift = effects.shift[a.name][classes]
            if a.name == "deal_value":
                attrs[a.name] = np.exp(a.mean + a.std * (0.5 * shift + rng.standard_normal(n_total)))
            elif a.name in ("line_items", "competitors"):
                lam = np.maximum(a.mean * np.exp(0.25 * shift), 0.1)
                attrs[a.name] = rng.poisson(lam).astype(np.float64) + (1.0 if a.name == "line_items" else 0.0)
            else:
                attrs[a.name] = a.mean + a.std * (0.25 * shift + rng.standard_normal(n_total))

    blocks = []
    for i in range(n_total):
        c = int(classes[i])
        inflight = i >= n_closed
        if rng.random() < min(1.0, _PATH_SIGNAL * config.signal_strength):
            lo, hi = _FURTHEST_STAGE[c]
        else:
            lo, hi = 2, 6
        furthest = int(rng.integers(lo, hi + 1))
        first = int(rng.integers(1, min(3, furthest) + 1))
        stages = np.arange(first, furthest + 1)
        factor = 1.0 + config.signal_strength * (_LIFETIME_FACTOR[c] - 1.0)
        mean_dwell = config.mean_lifetime_weeks * max(factor, 0.2) / len(stages)
        dwell = rng.geometric(1.0 / max(mean_dwell, 1.0), size=len(stages))
        weekly = np.repeat(stages, dwell)
        if c == 0:
            closed = int(rng.choice((7, 8)))
        else:
            closed = 8 + c
        n_open = len(weekly)
        if inflight:
            # starts late enough that the close falls past the data span
            start_week = int(rng.integers(max(span_weeks - n_open, 0), span_weeks))
            keep_weeks = span_weeks - start_week
            weekly = weekly[:keep_weeks]
            stage_seq = weekly
        else:
            latest = max(span_weeks - n_open - 1, 0)
            start_week = int(rng.integers(0, latest + 1))
            if start_week + n_open + 1 > span_weeks:
                weekly = weekly[: max(span_weeks - start_week - 1, 1)]
            stage_seq = np.append(weekly, closed)
        n_weeks = len(stage_seq)
        recorded = rng.random(n_weeks) < config.update_rate
        recorded[0] = True
        if not inflight:
            recorded[-1] = True
        weeks = np.flatnonzero(recorded)
        drift = _DEAL_DRIFT[c] * config.signal_strength
        block = {
            "opportunity_id": f"{seg.key.business_unit}-{seg.key.geography}-{i:06d}",
            "week": start_week + weeks,
            "sales_stage": stage_seq[weeks],
        }
        for a in config.attribute_schema:
            if a.name == "deal_value":
                steps = drift + 0.03 * rng.standard_normal(n_weeks)
                steps[0] = 0.0
                path = attrs[a.name][i] * np.exp(np.cumsum(steps))
                block[a.name] = np.round(path[weeks], 2)
            else:
                block[a.name] = attrs[a.name][i]
        blocks.append(block)

    ids = np.concatenate([np.full(len(b["week"]), b["opportunity_id"], dtype=object) for b in blocks])
    weeks = np.concatenate([b["week"] for b in blocks])
    frame = pd.DataFrame({
        "opportunity_id": ids,
        "record_date": (start + pd.to_timedelta(weeks * 7, unit="D")).astype("datetime64[ns]"),
        "sales_stage": np.concatenate([b["sales_stage"] for b in blocks]).astype(np.int64),
        "business_unit": seg.key.business_unit,
        "geography": seg.key.geography,
    })
    for a in config.attribute_schema:
        if a.name == "deal_value":
            frame[a.name] = np.concatenate([b[a.name] for b in blocks]).astype(np.float64)
        else:
            values = np.concatenate([np.full(len(b["week"]), b[a.name], dtype=object) for b in blocks])
            frame[a.name] = values.astype(np.float64) if a.kind == NUMERIC else values
    return frame


def generate_portfolio(config: GeneratorConfig) -> pd.DataFrame:
    """Generate the snapshot frame for every configured segment.

    Output rows are ordered by segment (config order), opportunity id and
    record date, and depend only on ``config``.
    """
    config.validate()
    effects = _Effects(config)
    frames = [_generate_segment(config, seg, effects) for seg in config.segments]
    frame = pd.concat(frames, ignore_index=True)
    if config.missing_rate > 0:
        frame = inject_missingness(frame, config.missing_rate, derive_seed(config.seed, "synthgen", "missing"))
    return frame


def latent_classes(frame: pd.DataFrame) -> pd.Series:
    """Outcome class per closed opportunity, read off its final stage."""
    last = frame.groupby("opportunity_id", sort=False)["sales_stage"].last()
    last = last[last >= 7]
    return last.map(lambda s: {7: 0, 8: 0, 9: 1, 10: 2, 11: 3}[int(s)])


def inject_missingness(frame: pd.DataFrame, rate: float, seed: int, columns=None) -> pd.DataFrame:
    """Blank each optional attribute cell independently with probability ``rate``.

    Key columns (ids, dates, stage, segment) are never touched.
    """
    if not 0 <= rate < 1:
        raise InvalidInputError(f"missing rate must lie in [0, 1), got {rate}")
    out = frame.copy()
    if rate == 0:
        return out
    if columns is None:
        columns = [c for c in frame.columns if c not in KEY_COLUMNS]
    bad = set(columns) & set(KEY_COLUMNS)
    if bad:
        raise InvalidInputError(f"key columns cannot be blanked: {sorted(bad)}")
    rng = np.random.default_rng(seed)
    for name in columns:
        mask = rng.random(len(out)) < rate
        if not mask.any():
            continue
        if pd.api.types.is_numeric_dtype(out[name]):
            col = out[name].to_numpy(np.float64).copy()
            col[mask] = np.nan
            out[name] = col
        else:
            col = out[name].to_numpy(object).copy()
            col[mask] = None
            out[name] = col
    return out
