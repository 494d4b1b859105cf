"""NDCG@k evaluation on test-window candidates and time-blocked alpha tuning."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bob import BobSettings, fit_bob, fit_directional, _direct
from .domain import SEGMENTS, Dataset, Segment, SegmentAssignment, assign_segments
from .pseudo import AlphaMode, AlphaPolicy

_log = logging.getLogger(__name__)

OVERALL = "overall"
REPORT_HEADER = ("method", "segment", "ndcg_at_k", "num_companies")
TRACE_HEADER = ("mode", "segment", "alpha", "fold", "validation_ndcg")
GLOBAL_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
SEGMENT_GRID = (0.0, 0.25, 0.5, 0.75)


@dataclass(frozen=True)
class RankedList:
    company: int
    seekers: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.seekers)) != len(self.seekers):
            raise ValueError("duplicate seeker in ranking")


class CandidateSet:
    """Per company: the seekers it was exposed to in the test window and
    whether each exposure produced a match (any exposure, for repeated pairs)."""

    def __init__(self, lists: dict[int, tuple[np.ndarray, np.ndarray]]):
        self._lists = dict(sorted(lists.items()))

    def __len__(self) -> int:
        return len(self._lists)

    def __getitem__(self, company: int) -> tuple[np.ndarray, np.ndarray]:
        return self._lists[company]

    def companies(self) -> list[int]:
        return list(self._lists)

    def relevance(self, company: int) -> dict[int, int]:
        seekers, rel = self._lists[company]
        return dict(zip(seekers.tolist(), rel.tolist()))

    def pairs(self) -> np.ndarray:
        if not self._lists:
            return np.empty((0, 2), np.int64)
        return np.concatenate(
            [np.column_stack([np.full(len(s), c), s]) for c, (s, _) in self._lists.items()]
        )


def build_candidates(test: Dataset) -> CandidateSet:
    if len(test) == 0:
        raise ValueError("empty test window")
    ns = test.num_seekers
    keys = test.companies * ns + test.seekers
    uniq, inv = np.unique(keys, return_inverse=True)
    rel = np.zeros(len(uniq), dtype=np.int8)
    np.maximum.at(rel, inv, test.matches)
    comp, seek = uniq // ns, uniq % ns
    bounds = np.flatnonzero(np.diff(comp)) + 1
    lists = {}
    for idx in np.split(np.arange(len(uniq)), bounds):
        lists[int(comp[idx[0]])] = (seek[idx], rel[idx])
    return CandidateSet(lists)


def _dcg(gains: Sequence[float], k: int) -> float:
    return sum(g / math.log2(i + 2) for i, g in enumerate(gains[:k]))


def ndcg_at_k(ranking: RankedList | Sequence[int], relevance: dict[int, int], k: int) -> float:
    """Binary-gain NDCG@k; 0 when the list holds no relevant item."""
    if k < 1:
        raise ValueError("k must be at least 1")
    seekers = ranking.seekers if isinstance(ranking, RankedList) else ranking
    gains = [float(relevance[s]) for s in seekers]
    ideal = _dcg(sorted(relevance.values(), reverse=True), k)
    if ideal == 0.0:
        return 0.0
    return _dcg(gains, k) / ideal


def _ndcg_ranked(rel_in_rank_order: np.ndarray, k: int) -> float:
    return ndcg_at_k(range(len(rel_in_rank_order)), dict(enumerate(rel_in_rank_order.tolist())), k)


@dataclass(frozen=True)
class MethodResult:
    method: str
    per_company: dict[int, float]
    segments: dict[int, Segment]

    def mean(self, segment: Segment | None = None) -> tuple[float, int]:
        vals = [
            v for c, v in sorted(self.per_company.items())
            if segment is None or self.segments.get(c, Segment.LOW) == segment
        ]
        return (float(np.mean(vals)) if vals else 0.0), len(vals)

    def rows(self) -> list[tuple[str, str, float, int]]:
        out = []
        for seg in (None, *SEGMENTS):
            value, n = self.mean(seg)
            out.append((self.method, OVERALL if seg is None else seg.value, value, n))
        return out


def rank_company(scorer, company: int, seekers: np.ndarray) -> np.ndarray:
    scores = scorer.score_pairs(np.full(len(seekers), company, dtype=np.int64), seekers)
    return seekers[np.lexsort((seekers, -np.asarray(scores)))]


def evaluate_method(
    method: str,
    scorer,
    candidates: CandidateSet,
    segments: SegmentAssignment,
    k: int = 10,
    threads: int = 1,
) -> MethodResult:
    """Mean NDCG@k over companies with at least one matched candidate.

    Companies are scored in chunks (optionally on worker threads) and merged
    in ascending id order, so results do not depend on ``threads``.
    """
    companies = [c for c in candidates.companies() if candidates[c][1].any()]

    def work(chunk: list[int]) -> list[tuple[int, float]]:
        if not chunk:
            return []
        pairs = np.concatenate(
            [np.column_stack([np.full(len(candidates[c][0]), c), candidates[c][0]]) for c in chunk]
        )
        scores = np.asarray(scorer.score_pairs(pairs[:, 0], pairs[:, 1]))
        out, pos = [], 0
        for c in chunk:
            seekers, rel = candidates[c]
            s = scores[pos : pos + len(seekers)]
            pos += len(seekers)
            order = np.lexsort((seekers, -s))
            out.append((c, _ndcg_ranked(rel[order], k)))
        return out

    chunks = [list(x) for x in np.array_split(companies, max(threads, 1))] if companies else []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(ch) for ch in chunks]
    per_company = dict(sorted(x for part in parts for x in part))
    seg_map = {c: segments[c] if c in segments else Segment.LOW for c in per_company}
    return MethodResult(method, per_company, seg_map)


@dataclass
class EvaluationReport:
    rows: list[tuple[str, str, float, int]]
    k: int = 10

    @classmethod
    def from_results(cls, results: Iterable[MethodResult], k: int = 10) -> "EvaluationReport":
        return cls([row for r in results for row in r.rows()], k)

    def value(self, method: str, segment: str = OVERALL) -> float:
        for m, s, v, _ in self.rows:
            if m == method and s == segment:
                return v
        raise KeyError((method, segment))

    def methods(self) -> list[str]:
        return list(dict.fromkeys(m for m, *_ in self.rows))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for m, s, v, n in self.rows:
                w.writerow((m, s, repr(float(v)), n))

    @classmethod
    def read_csv(cls, path: str | Path, k: int = 10) -> "EvaluationReport":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [
                (r["method"], r["segment"], float(r["ndcg_at_k"]), int(r["num_companies"]))
                for r in csv.DictReader(fh)
            ]
        return cls(rows, k)

    def table(self) -> str:
        segs = [OVERALL] + [s.value for s in SEGMENTS]
        width = max([len("method")] + [len(m) for m in self.methods()])
        head = f"{'method':<{width}}  " + "  ".join(f"{s:>8}" for s in segs)
        lines = [f"NDCG@{self.k}", head, "-" * len(head)]
        for m in self.methods():
            vals = "  ".join(f"{self.value(m, s):8.4f}" for s in segs)
            lines.append(f"{m:<{width}}  {vals}")
        counts = "  ".join(
            f"{next(n for mm, ss, _, n in self.rows if ss == s):8d}" for s in segs
        )
        lines.append(f"{'companies':<{width}}  {counts}")
        return "\n".join(lines)


# ---------------------------------------------------------------- tuning


@dataclass(frozen=True)
class Fold:
    train: Dataset
    validation: Dataset


def time_folds(train: Dataset, folds: int) -> list[Fold]:
    """Expanding-window folds over ``2 * folds`` contiguous time blocks.

    Fold ``i`` fits on blocks ``[0, folds + i)`` and validates on block
    ``folds + i``, so every fold trains on earlier events than it validates on.
    """
    if folds < 1:
        raise ValueError("degenerate folds")
    ts = train.timestamps
    nblocks = 2 * folds
    if len(np.unique(ts)) < nblocks:
        raise ValueError("degenerate folds")
    cuts = [int(ts[min(len(ts) - 1, (b * len(ts)) // nblocks)]) for b in range(nblocks)]
    cuts.append(int(ts[-1]) + 1)
    out = []
    for i in range(folds):
        lo, hi = cuts[folds + i], cuts[folds + i + 1]
        fit = train.subset(ts < lo)
        val = train.subset((ts >= lo) & (ts < hi))
        if len(fit) == 0 or len(val) == 0:
            raise ValueError("degenerate folds")
        out.append(Fold(fit, val))
    return out


@dataclass
class TuningTrace:
    """Validation NDCG per (alpha, fold, segment) from global-alpha fold runs."""

    scores: dict[tuple[float, int, str], float]
    folds: int

    def mean(self, alpha: float, segment: str) -> float:
        return float(np.mean([self.scores[(alpha, f, segment)] for f in range(self.folds)]))

    def rows(self, mode: AlphaMode, grid: Sequence[float]) -> list[tuple]:
        segs = [OVERALL] if mode is AlphaMode.GLOBAL else [s.value for s in SEGMENTS]
        return [
            (mode.value, s, a, f, self.scores[(a, f, s)])
            for s in segs
            for a in grid
            for f in range(self.folds)
        ]

    def write_csv(self, path: str | Path, mode: AlphaMode, grid: Sequence[float]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for mode_, s, a, f, v in self.rows(mode, grid):
                w.writerow((mode_, s, repr(float(a)), f, repr(float(v))))


def cross_validate(
    train: Dataset,
    segments: SegmentAssignment,
    grid: Sequence[float],
    settings: BobSettings,
    folds: int = 5,
    k: int = 10,
    threads: int = 1,
    store_for=None,
) -> TuningTrace:
    """One global-alpha BoB fit per (fold, alpha); scores read per segment.

    ``segments`` (from the full training window) groups validation companies;
    each fold's own features use segments recomputed from that fold's window.
    ``store_for(fold)`` may return a model cache for that fold.
    """
    grid = sorted(set(float(a) for a in grid))
    if not grid:
        raise ValueError("empty alpha grid")
    windows = time_folds(train, folds)

    def run(i: int) -> dict:
        fold = windows[i]
        store = store_for(i) if store_for else _direct
        fold_segments = assign_segments(fold.train)
        scout, reply = fit_directional(fold.train, settings, store)
        cands = build_candidates(fold.validation)
        out = {}
        for a in grid:
            scorer = fit_bob(
                fold.train, scout, reply, fold_segments, AlphaPolicy.global_(a), settings,
                name=f"bob-alpha-{a:.2f}", store=store,
            )
            res = evaluate_method("bob", scorer, cands, segments, k)
            out[(a, i, OVERALL)] = res.mean()[0]
            for s in SEGMENTS:
                out[(a, i, s.value)] = res.mean(s)[0]
            _log.info("fold %d alpha %.2f: validation NDCG@%d %.4f", i, a, k, out[(a, i, OVERALL)])
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(folds)))
    else:
        parts = [run(i) for i in range(folds)]
    scores = {}
    for p in parts:
        scores.update(p)
    return TuningTrace(scores, folds)


def _argmax_alpha(values: dict[float, float]) -> float:
    """Best mean score; exact ties go to the larger alpha."""
    best_a, best_v = None, -np.inf
    for a in sorted(values, reverse=True):
        if values[a] > best_v:
            best_a, best_v = a, values[a]
    return best_a


def select_alpha(trace: TuningTrace, mode: AlphaMode | str, grid: Sequence[float]) -> AlphaPolicy:
    mode = AlphaMode(mode)
    grid = sorted(set(float(a) for a in grid))
    if not grid:
        raise ValueError("empty alpha grid")
    if mode is AlphaMode.GLOBAL:
        return AlphaPolicy.global_(_argmax_alpha({a: trace.mean(a, OVERALL) for a in grid}))
    chosen = [_argmax_alpha({a: trace.mean(a, s.value) for a in grid}) for s in SEGMENTS]
    return AlphaPolicy.per_segment(*chosen)


def tune_alpha(
    train: Dataset,
    folds: int,
    mode: AlphaMode | str,
    grid: Sequence[float],
    settings: BobSettings,
    segments: SegmentAssignment | None = None,
    k: int = 10,
    threads: int = 1,
    store_for=None,
) -> tuple[AlphaPolicy, TuningTrace]:
    """Pick alpha by mean validation NDCG@k over time-blocked folds of ``train``."""
    mode = AlphaMode(mode)
    grid = sorted(set(float(a) for a in grid))
    if not grid:
        raise ValueError("empty alpha grid")
    if len(grid) == 1 and mode is AlphaMode.GLOBAL:
        return AlphaPolicy.global_(grid[0]), TuningTrace({}, 0)
    if segments is None:
        segments = assign_segments(train)
    trace = cross_validate(train, segments, grid, settings, folds, k, threads, store_for)
    return select_alpha(trace, mode, grid), trace
