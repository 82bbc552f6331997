"""Ground-truth labels for open snapshots, segment partitioning and quarters."""
from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import pandas as pd

from .domain import (
    N_CLASSES,
    LabeledExample,
    OutcomeClass,
    SegmentKey,
    check_unique_keys,
    iter_snapshots,
    normalize_frame,
    stage_label_array,
)


class Quarter(NamedTuple):
    year: int
    q: int

    def __str__(self):
        return f"{self.year}Q{self.q}"

    @property
    def index(self) -> int:
        """Consecutive integer index; adjacent quarters differ by one."""
        return self.year * 4 + self.q - 1

    @classmethod
    def from_index(cls, index: int) -> "Quarter":
        return cls(index // 4, index % 4 + 1)

    @classmethod
    def parse(cls, text: str) -> "Quarter":
        year, _, q = text.upper().partition("Q")
        return cls(int(year), int(q))


def quarter_of(date) -> Quarter:
    if isinstance(date, (pd.Timestamp, _dt.datetime)):
        date = date.date() if isinstance(date, _dt.datetime) else date.to_pydatetime().date()
    return Quarter(date.year, (date.month - 1) // 3 + 1)


def quarter_index(dates) -> np.ndarray:
    """Vectorised ``quarter_of(d).index`` for a datetime-like array."""
    d = pd.DatetimeIndex(pd.to_datetime(np.asarray(dates)))
    return (d.year * 4 + (d.month - 1) // 3).to_numpy(np.int64)


@dataclass
class LabeledDataset:
    """Labeled open snapshots of one segment.

    ``frame`` holds the snapshot columns plus ``label`` (int 0..3) and
    ``close_date`` (date of the opportunity's first closed snapshot).
    """

    segment: SegmentKey
    frame: pd.DataFrame

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.frame["label"].to_numpy(np.int64), minlength=N_CLASSES)

    def __len__(self):
        return len(self.frame)

    def examples(self) -> list[LabeledExample]:
        snaps = iter_snapshots(self.frame.drop(columns=["label", "close_date"]))
        return [LabeledExample(s, OutcomeClass(int(y))) for s, y in zip(snaps, self.frame["label"])]


@dataclass
class Labeling:
    labeled: pd.DataFrame
    inflight: pd.DataFrame

    @property
    def datasets(self) -> dict[SegmentKey, LabeledDataset]:
        return partition_by_segment(self.labeled)


def _canonical_sort(frame: pd.DataFrame) -> pd.DataFrame:
    order = np.lexsort((np.arange(len(frame)), frame["record_date"].to_numpy(), frame["opportunity_id"].to_numpy()))
    return frame.iloc[order].reset_index(drop=True)


def derive_labels(snapshots: pd.DataFrame) -> Labeling:
    """Label every open snapshot with its opportunity's first closed outcome.

    Snapshots are grouped by opportunity and ordered by record date. The first
    closed snapshot (stage 7-11) supplies the label for all open snapshots
    before it; that snapshot and everything dated after it are dropped.
    Opportunities that never close are returned separately as in-flight.
    """
    frame = normalize_frame(snapshots)
    check_unique_keys(frame)
    frame = _canonical_sort(frame)
    if "label" in frame.columns or "close_date" in frame.columns:
        frame = frame.drop(columns=[c for c in ("label", "close_date") if c in frame.columns])

    labels = stage_label_array(frame["sales_stage"].to_numpy())
    ids = frame["opportunity_id"].to_numpy()
    pos = frame.groupby("opportunity_id", sort=False).cumcount().to_numpy()
    closed = labels >= 0

    big = np.iinfo(np.int64).max
    first_closed_pos = (
        pd.Series(np.where(closed, pos, big)).groupby(ids, sort=False).transform("min").to_numpy()
    )
    has_close = first_closed_pos != big
    closed_rows = np.flatnonzero(closed & (pos == first_closed_pos))
    close_label = pd.Series(labels[closed_rows], index=ids[closed_rows])
    close_date = pd.Series(frame["record_date"].to_numpy()[closed_rows], index=ids[closed_rows])

    keep = has_close & (pos < first_closed_pos)
    labeled = frame.loc[keep].copy()
    labeled["label"] = close_label.reindex(labeled["opportunity_id"]).to_numpy(np.int64)
    labeled["close_date"] = close_date.reindex(labeled["opportunity_id"]).to_numpy()
    inflight = frame.loc[~has_close].copy()
    return Labeling(labeled.reset_index(drop=True), inflight.reset_index(drop=True))


def partition_by_segment(labeled: pd.DataFrame) -> dict[SegmentKey, LabeledDataset]:
    out = {}
    keys = list(zip(labeled["business_unit"], labeled["geography"]))
    for key in sorted(set(keys)):
        mask = (labeled["business_unit"] == key[0]).to_numpy() & (labeled["geography"] == key[1]).to_numpy()
        seg = SegmentKey(*key)
        out[seg] = LabeledDataset(seg, labeled.loc[mask].reset_index(drop=True))
    return out


def class_count_table(datasets: dict[SegmentKey, LabeledDataset]) -> pd.DataFrame:
    """Per-segment class counts and fractions, one row per segment."""
    rows = []
    for seg, ds in sorted(datasets.items()):
        counts = ds.class_counts
        total = int(counts.sum())
        row = {"segment": str(seg)}
        for k in range(N_CLASSES):
            row[f"class{k}"] = int(counts[k])
            row[f"class{k}_frac"] = round(counts[k] / total, 2) if total else 0.0
        row["total"] = total
        rows.append(row)
    return pd.DataFrame(rows)
