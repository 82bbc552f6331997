"""Core vocabulary: sales stage codes, outcome classes, segments and snapshots.

Snapshot datasets travel through the pipeline as :class:`pandas.DataFrame`
objects with the key columns listed in :data:`KEY_COLUMNS`; every other column
is an optional attribute. :class:`OpportunitySnapshot` is the record-level
view of one row, used where per-record logic reads more naturally.

Missing attribute values are represented by :data:`MISSING` in record form and
by ``NaN``/``None`` in frame form. They are never encoded as a number.
"""
from __future__ import annotations

import datetime as _dt
import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping

import numpy as np
import pandas as pd


class InvalidInputError(ValueError):
    """Raised when an operation receives arguments outside its contract."""


class DataIntegrityError(ValueError):
    """Raised when a dataset violates a structural invariant."""


class SchemaError(ValueError):
    """Raised when data does not conform to a declared schema."""


OPEN_STAGES = (1, 2, 3, 4, 5, 6)
CLOSED_STAGES = (7, 8, 9, 10, 11)

STAGE_NAMES = {
    1: "Noticing",
    2: "Noticed/Identifying",
    3: "Identified/Validating",
    4: "Validated/Qualifying",
    5: "Qualified/Gaining Agreement",
    6: "Cond. Agreed/Closing",
    7: "Won/Implementing",
    8: "Won and Complete",
    9: "No Bid",
    10: "Customer Did Not Pursue",
    11: "Lost to Competition",
}


class OutcomeClass(enum.IntEnum):
    WIN = 0
    NO_BID = 1
    CUSTOMER_DID_NOT_PURSUE = 2
    LOST_TO_COMPETITION = 3


N_CLASSES = len(OutcomeClass)

_STAGE_TO_CLASS = {
    7: OutcomeClass.WIN,
    8: OutcomeClass.WIN,
    9: OutcomeClass.NO_BID,
    10: OutcomeClass.CUSTOMER_DID_NOT_PURSUE,
    11: OutcomeClass.LOST_TO_COMPETITION,
}


def _check_code(code) -> int:
    if isinstance(code, (bool, np.bool_)) or not isinstance(code, (int, np.integer)):
        raise InvalidInputError(f"sales stage code must be an integer, got {code!r}")
    code = int(code)
    if not 1 <= code <= 11:
        raise InvalidInputError(f"sales stage code must be in [1, 11], got {code}")
    return code


def is_closed(code: int) -> bool:
    """Return True when the stage code marks a reached outcome (7-11)."""
    return _check_code(code) >= 7


def label_for_stage(code: int) -> OutcomeClass | None:
    """Map a sales stage code to its outcome class, or None for open stages."""
    return _STAGE_TO_CLASS.get(_check_code(code))


def stage_label_array(codes: np.ndarray) -> np.ndarray:
    """Vectorised :func:`label_for_stage`; open stages map to -1."""
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 1 or codes.max() > 11):
        raise InvalidInputError("sales stage codes must be in [1, 11]")
    lut = np.array([-1, -1, -1, -1, -1, -1, -1, 0, 0, 1, 2, 3], dtype=np.int64)
    return lut[codes.astype(np.int64)]


class _Missing:
    """Singleton marking an absent attribute value."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MISSING"

    def __bool__(self):
        return False

    def __reduce__(self):
        return (_Missing, ())


MISSING = _Missing()


def is_missing(value) -> bool:
    if value is MISSING or value is None:
        return True
    if isinstance(value, float) and math.isnan(value):
        return True
    return value is pd.NA or value is pd.NaT


@dataclass(frozen=True, order=True)
class SegmentKey:
    business_unit: str
    geography: str

    def __str__(self):
        return f"{self.business_unit}/{self.geography}"

    @classmethod
    def parse(cls, text: str) -> "SegmentKey":
        bu, sep, geo = text.partition("/")
        if not sep:
            raise InvalidInputError(f"segment must look like 'BU/GEO', got {text!r}")
        return cls(bu, geo)


@dataclass(frozen=True)
class OpportunitySnapshot:
    opportunity_id: str
    record_date: _dt.date
    sales_stage: int
    segment: SegmentKey
    static_attrs: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        _check_code(self.sales_stage)
        value = self.static_attrs.get("deal_value", MISSING)
        if not is_missing(value) and value < 0:
            raise InvalidInputError("deal_value must be non-negative")
        # freeze the mapping so the record stays hashable-in-spirit
        object.__setattr__(self, "static_attrs", _FrozenDict(self.static_attrs))

    @property
    def is_open(self) -> bool:
        return not is_closed(self.sales_stage)


class _FrozenDict(dict):
    def _readonly(self, *args, **kwargs):
        raise TypeError("snapshot attributes are immutable")

    __setitem__ = __delitem__ = clear = pop = popitem = setdefault = update = _readonly

    def __hash__(self):
        return hash(tuple(sorted((k, repr(v)) for k, v in self.items())))


@dataclass(frozen=True)
class LabeledExample:
    snapshot: OpportunitySnapshot
    label: OutcomeClass

    def __post_init__(self):
        if not self.snapshot.is_open:
            raise InvalidInputError("labeled examples must come from open snapshots")


# --------------------------------------------------------------------------
# frame <-> record conversion
# --------------------------------------------------------------------------

KEY_COLUMNS = ("opportunity_id", "record_date", "sales_stage", "business_unit", "geography")
NUMERIC = "num"
CATEGORICAL = "cat"


def attribute_columns(frame: pd.DataFrame) -> list[str]:
    return [c for c in frame.columns if c not in KEY_COLUMNS]


def column_kinds(frame: pd.DataFrame) -> dict[str, str]:
    """Infer num/cat kinds for the attribute columns of a snapshot frame."""
    kinds = {}
    for name in attribute_columns(frame):
        kinds[name] = NUMERIC if pd.api.types.is_numeric_dtype(frame[name]) else CATEGORICAL
    return kinds


def normalize_frame(frame: pd.DataFrame, kinds: Mapping[str, str] | None = None) -> pd.DataFrame:
    """Coerce a snapshot frame to canonical dtypes and validate its keys."""
    missing = [c for c in KEY_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(f"snapshot frame lacks key columns {missing}")
    out = frame.copy()
    out["opportunity_id"] = out["opportunity_id"].astype(str)
    out["record_date"] = pd.to_datetime(out["record_date"]).dt.normalize().astype("datetime64[ns]")
    out["sales_stage"] = out["sales_stage"].astype(np.int64)
    out["business_unit"] = out["business_unit"].astype(str)
    out["geography"] = out["geography"].astype(str)
    if out["sales_stage"].size:
        stage_label_array(out["sales_stage"].to_numpy())
    kinds = dict(kinds) if kinds is not None else column_kinds(out)
    for name, kind in kinds.items():
        if kind == NUMERIC:
            out[name] = pd.to_numeric(out[name], errors="raise").astype(np.float64)
        else:
            col = out[name].astype(object)
            out[name] = col.where(~col.map(is_missing), None)
    if "deal_value" in out.columns and (out["deal_value"].dropna() < 0).any():
        raise InvalidInputError("deal_value must be non-negative")
    return out


def snapshots_to_frame(snapshots: Iterable[OpportunitySnapshot]) -> pd.DataFrame:
    rows = []
    for s in snapshots:
        row = {
            "opportunity_id": s.opportunity_id,
            "record_date": pd.Timestamp(s.record_date),
            "sales_stage": s.sales_stage,
            "business_unit": s.segment.business_unit,
            "geography": s.segment.geography,
        }
        for k, v in s.static_attrs.items():
            row[k] = None if is_missing(v) else v
        rows.append(row)
    frame = pd.DataFrame(rows, columns=_ordered_columns(rows))
    return normalize_frame(frame)


def _ordered_columns(rows):
    cols = list(KEY_COLUMNS)
    for row in rows:
        for k in row:
            if k not in cols:
                cols.append(k)
    return cols


def iter_snapshots(frame: pd.DataFrame) -> Iterator[OpportunitySnapshot]:
    attrs = attribute_columns(frame)
    for rec in frame.itertuples(index=False):
        d = rec._asdict()
        static = {k: (MISSING if is_missing(d[k]) else d[k]) for k in attrs}
        yield OpportunitySnapshot(
            opportunity_id=d["opportunity_id"],
            record_date=pd.Timestamp(d["record_date"]).date(),
            sales_stage=int(d["sales_stage"]),
            segment=SegmentKey(d["business_unit"], d["geography"]),
            static_attrs=static,
        )


def check_unique_keys(frame: pd.DataFrame) -> None:
    dup = frame.duplicated(subset=["opportunity_id", "record_date"], keep=False)
    if dup.any():
        first = frame.loc[dup, ["opportunity_id", "record_date"]].iloc[0]
        raise DataIntegrityError(
            f"duplicate snapshot key (opportunity_id={first.iloc[0]!r}, "
            f"record_date={first.iloc[1].date()})"
        )


# --------------------------------------------------------------------------
# CSV with declared header
# --------------------------------------------------------------------------

def write_csv(frame: pd.DataFrame, path, kinds: Mapping[str, str] | None = None) -> None:
    """Write a snapshot frame as CSV whose header declares each column's kind.

    Attribute columns appear as ``name:num`` or ``name:cat``; missing cells
    are left empty. Floats are written with ``repr`` so reading back is exact.
    """
    kinds = dict(kinds) if kinds is not None else column_kinds(frame)
    out = pd.DataFrame(index=frame.index)
    header = []
    for name in frame.columns:
        col = frame[name]
        if name == "record_date":
            out[name] = pd.to_datetime(col).dt.strftime("%Y-%m-%d")
            header.append(name)
        elif name in KEY_COLUMNS:
            out[name] = col.astype(str)
            header.append(name)
        elif kinds[name] == NUMERIC:
            out[name] = [("" if math.isnan(v) else repr(float(v))) for v in col.to_numpy(np.float64)]
            header.append(f"{name}:{NUMERIC}")
        else:
            out[name] = ["" if is_missing(v) else str(v) for v in col]
            header.append(f"{name}:{CATEGORICAL}")
    out.columns = header
    out.to_csv(path, index=False, lineterminator="\n")


def read_csv(path) -> pd.DataFrame:
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    kinds = {}
    renamed = {}
    for col in raw.columns:
        name, _, kind = col.partition(":")
        renamed[col] = name
        if name in KEY_COLUMNS:
            continue
        if kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"CSV column {col!r} does not declare a kind (':num' or ':cat')")
        kinds[name] = kind
    raw = raw.rename(columns=renamed)
    for name, kind in kinds.items():
        col = raw[name]
        if kind == NUMERIC:
            raw[name] = [float("nan") if v == "" else float(v) for v in col]
        else:
            raw[name] = [None if v == "" else v for v in col]
    return normalize_frame(raw, kinds)


# --------------------------------------------------------------------------
# versioned binary cache
# --------------------------------------------------------------------------

CACHE_MAGIC = "tenderrisk-frame"
CACHE_VERSION = 1


def save_frame(frame: pd.DataFrame, path, extra: Mapping[str, Any] | None = None) -> None:
    """Store a frame in a versioned ``.npz`` container without pickling.

    Supported column types are float, integer, datetime and string-like
    object columns (``None`` marks missing strings).
    """
    arrays = {}
    columns = []
    for i, name in enumerate(frame.columns):
        col = frame[name]
        key = f"c{i}"
        if pd.api.types.is_datetime64_any_dtype(col):
            arrays[key] = col.to_numpy("datetime64[ns]").astype(np.int64)
            kind = "datetime"
        elif pd.api.types.is_integer_dtype(col):
            arrays[key] = col.to_numpy(np.int64)
            kind = "int"
        elif pd.api.types.is_float_dtype(col):
            arrays[key] = col.to_numpy(np.float64)
            kind = "float"
        else:
            values = col.to_numpy(object)
            mask = np.array([is_missing(v) for v in values], dtype=bool)
            arrays[key] = np.array(["" if m else str(v) for v, m in zip(values, mask)], dtype=str)
            arrays[key + "_mask"] = mask
            kind = "str"
        columns.append({"name": str(name), "kind": kind})
    meta = {
        "magic": CACHE_MAGIC,
        "version": CACHE_VERSION,
        "columns": columns,
        "n_rows": int(len(frame)),
        "extra": dict(extra or {}),
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_frame(path) -> tuple[pd.DataFrame, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("magic") != CACHE_MAGIC:
            raise SchemaError(f"{path} is not a tenderrisk frame cache")
        if meta.get("version") != CACHE_VERSION:
            raise SchemaError(f"unsupported cache version {meta.get('version')}")
        cols = {}
        for i, spec in enumerate(meta["columns"]):
            key = f"c{i}"
            arr = data[key]
            if spec["kind"] == "datetime":
                cols[spec["name"]] = pd.Series(arr.astype("datetime64[ns]"))
            elif spec["kind"] in ("int", "float"):
                cols[spec["name"]] = pd.Series(arr)
            else:
                mask = data[key + "_mask"]
                cols[spec["name"]] = pd.Series(
                    [None if m else str(v) for v, m in zip(arr.tolist(), mask.tolist())], dtype=object
                )
        frame = pd.DataFrame(cols, columns=[c["name"] for c in meta["columns"]])
    return frame, meta["extra"]
