"""Entities, interaction logs, time splits and activity segments.

Event logs are stored column-wise (one numpy array per field) because every
downstream consumer works on whole columns; :class:`InteractionEvent` is the
row view used at the edges (CSV I/O, tests).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

EVENT_HEADER = ("timestamp", "company_id", "seeker_id", "scout_sent", "replied")


class Segment(str, Enum):
    HIGH = "High"
    MIDDLE = "Middle"
    LOW = "Low"


SEGMENTS = (Segment.HIGH, Segment.MIDDLE, Segment.LOW)


class InteractionEvent(NamedTuple):
    timestamp: int
    company: int
    seeker: int
    scout_sent: int
    replied: int


def match_label(event: InteractionEvent) -> int:
    """A match is a scout followed by a reply."""
    return int(bool(event.scout_sent) and bool(event.replied))


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered interaction log over a fixed company/seeker universe."""

    timestamps: np.ndarray
    companies: np.ndarray
    seekers: np.ndarray
    scouts: np.ndarray
    replies: np.ndarray
    num_companies: int
    num_seekers: int

    def __post_init__(self):
        cols = {}
        for name in ("timestamps", "companies", "seekers"):
            cols[name] = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
        for name in ("scouts", "replies"):
            cols[name] = np.ascontiguousarray(getattr(self, name), dtype=np.int8)
        n = len(cols["timestamps"])
        if any(len(c) != n for c in cols.values()):
            raise ValueError("event columns have different lengths")
        for name, col in cols.items():
            col.setflags(write=False)
            object.__setattr__(self, name, col)
        if self.num_companies < 0 or self.num_seekers < 0:
            raise ValueError("negative universe size")
        if n == 0:
            return
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("events must be sorted by timestamp")
        if self.companies.min() < 0 or self.companies.max() >= self.num_companies:
            raise ValueError("company id out of range")
        if self.seekers.min() < 0 or self.seekers.max() >= self.num_seekers:
            raise ValueError("seeker id out of range")
        if np.any((self.scouts != 0) & (self.scouts != 1)) or np.any(
            (self.replies != 0) & (self.replies != 1)
        ):
            raise ValueError("scout/reply flags must be binary")
        bad = np.flatnonzero((self.replies == 1) & (self.scouts == 0))
        if len(bad):
            raise ValueError(f"event {int(bad[0])}: reply without scout")
        keys = np.stack([self.timestamps, self.companies, self.seekers], axis=1)
        if len(np.unique(keys, axis=0)) != n:
            raise ValueError("duplicate (company, seeker, timestamp) event")

    @classmethod
    def from_events(
        cls, events: list[InteractionEvent], num_companies: int, num_seekers: int
    ) -> "Dataset":
        arr = np.array(events, dtype=np.int64).reshape(-1, 5)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], num_companies, num_seekers)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self) -> Iterator[InteractionEvent]:
        for row in zip(
            self.timestamps.tolist(),
            self.companies.tolist(),
            self.seekers.tolist(),
            self.scouts.tolist(),
            self.replies.tolist(),
        ):
            yield InteractionEvent(*row)

    @property
    def matches(self) -> np.ndarray:
        return (self.scouts & self.replies).astype(np.int8)

    def subset(self, mask: np.ndarray) -> "Dataset":
        return Dataset(
            self.timestamps[mask],
            self.companies[mask],
            self.seekers[mask],
            self.scouts[mask],
            self.replies[mask],
            self.num_companies,
            self.num_seekers,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_companies == other.num_companies
            and self.num_seekers == other.num_seekers
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("timestamps", "companies", "seekers", "scouts", "replies")
            )
        )


@dataclass(frozen=True)
class TimeSplit:
    train: Dataset
    test: Dataset
    boundary_timestamp: int


def sparsity(dataset: Dataset) -> float:
    """Matches per cell of the company x seeker matrix."""
    cells = dataset.num_companies * dataset.num_seekers
    if cells == 0:
        raise ValueError("empty market")
    return int(dataset.matches.sum()) / cells


def split_by_time(dataset: Dataset, boundary: int) -> TimeSplit:
    """Train gets events strictly before ``boundary``, test the rest."""
    if len(dataset) == 0:
        raise ValueError("degenerate split")
    lo, hi = int(dataset.timestamps[0]), int(dataset.timestamps[-1])
    if not lo <= boundary <= hi + 1:
        raise ValueError("degenerate split")
    cut = int(np.searchsorted(dataset.timestamps, boundary, side="left"))
    if cut == 0 or cut == len(dataset):
        raise ValueError("degenerate split")
    idx = np.arange(len(dataset))
    return TimeSplit(dataset.subset(idx < cut), dataset.subset(idx >= cut), int(boundary))


def quantile_boundary(dataset: Dataset, train_fraction: float) -> int:
    """Timestamp of the event at the ``train_fraction`` position of the log."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    if len(dataset) < 2:
        raise ValueError("degenerate split")
    pos = min(max(int(train_fraction * len(dataset)), 1), len(dataset) - 1)
    return int(dataset.timestamps[pos])


class SegmentAssignment:
    """Company -> activity segment; immutable mapping."""

    def __init__(self, segments: dict[int, Segment]):
        self._segments = dict(segments)

    def __getitem__(self, company: int) -> Segment:
        try:
            return self._segments[company]
        except KeyError:
            raise KeyError("unassigned company") from None

    def __contains__(self, company: int) -> bool:
        return company in self._segments

    def __len__(self) -> int:
        return len(self._segments)

    def __eq__(self, other) -> bool:
        return isinstance(other, SegmentAssignment) and self._segments == other._segments

    def items(self):
        return sorted(self._segments.items())

    def members(self, segment: Segment) -> list[int]:
        return [c for c, s in self.items() if s == segment]

    def codes(self, num_companies: int) -> np.ndarray:
        """Per-company segment index (0=High, 1=Middle, 2=Low); unknown ids map to Low."""
        out = np.full(num_companies, 2, dtype=np.int64)
        for c, s in self._segments.items():
            if c < num_companies:
                out[c] = SEGMENTS.index(s)
        return out


def assign_segments(train: Dataset, num_segments: int = 3) -> SegmentAssignment:
    """Terciles of companies by number of scouts sent in ``train``.

    Companies are ordered by descending scout count with ties broken by
    ascending id; the first third is High, the last third Low.
    """
    if num_segments != 3:
        raise ValueError("only three activity segments are supported")
    if len(train) == 0:
        raise ValueError("empty training window")
    counts = np.bincount(
        train.companies, weights=train.scouts.astype(np.float64), minlength=train.num_companies
    )
    ids = np.arange(train.num_companies)
    order = np.lexsort((ids, -counts))
    out = {}
    for seg, chunk in zip(SEGMENTS, np.array_split(order, 3)):
        for c in chunk.tolist():
            out[c] = seg
    return SegmentAssignment(out)


def write_events(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_HEADER)
        w.writerows(
            zip(
                dataset.timestamps.tolist(),
                dataset.companies.tolist(),
                dataset.seekers.tolist(),
                dataset.scouts.tolist(),
                dataset.replies.tolist(),
            )
        )


def read_events(
    path: str | Path, num_companies: int | None = None, num_seekers: int | None = None
) -> Dataset:
    """Load an event CSV.

    Universe sizes come from the arguments, else from an optional leading
    ``# num_companies=.. num_seekers=..`` comment, else from the largest ids seen.
    """
    rows = []
    declared = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = iter(enumerate(fh, start=1))
        for lineno, line in lines:
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    declared[key] = int(val)
                continue
            header = tuple(line.rstrip("\n").split(","))
            if header != EVENT_HEADER:
                raise ValueError(f"line {lineno}: expected header {','.join(EVENT_HEADER)}")
            break
        else:
            raise ValueError("missing header")
        for lineno, line in lines:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != 5:
                raise ValueError(f"line {lineno}: expected 5 fields")
            try:
                row = [int(p) for p in parts]
            except ValueError:
                raise ValueError(f"line {lineno}: non-integer field") from None
            if row[4] == 1 and row[3] != 1:
                raise ValueError(f"line {lineno}: reply without scout")
            rows.append(row)
    arr = np.array(rows, dtype=np.int64).reshape(-1, 5)
    if num_companies is None:
        num_companies = declared.get("num_companies", int(arr[:, 1].max()) + 1 if len(arr) else 0)
    if num_seekers is None:
        num_seekers = declared.get("num_seekers", int(arr[:, 2].max()) + 1 if len(arr) else 0)
    order = np.argsort(arr[:, 0], kind="stable")
    arr = arr[order]
    return Dataset(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], num_companies, num_seekers)


def write_segments(segments: SegmentAssignment, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("company_id,segment\n")
        for c, s in segments.items():
            fh.write(f"{c},{s.value}\n")


def read_segments(path: str | Path) -> SegmentAssignment:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return SegmentAssignment({int(r["company_id"]): Segment(r["segment"]) for r in reader})
