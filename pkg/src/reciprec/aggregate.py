"""Aggregation functions combining scout and reply predictions."""

from __future__ import annotations

from enum import Enum

import numpy as np


class Aggregator(str, Enum):
    SCOUT_ONLY = "scout-only"
    REPLY_ONLY = "reply-only"
    MULTIPLICATION = "multiplication"
    HARMONIC_MEAN = "harmonic-mean"


def _check(x: np.ndarray) -> None:
    if np.any(~(x >= 0.0) | (x > 1.0)):
        raise ValueError("invalid probability")


def aggregate_array(kind: Aggregator | str, p_scout, p_reply) -> np.ndarray:
    kind = Aggregator(kind)
    p = np.asarray(p_scout, dtype=np.float64)
    q = np.asarray(p_reply, dtype=np.float64)
    _check(p)
    _check(q)
    if kind is Aggregator.SCOUT_ONLY:
        return p.copy()
    if kind is Aggregator.REPLY_ONLY:
        return q.copy()
    if kind is Aggregator.MULTIPLICATION:
        return p * q
    total = p + q
    safe = np.where(total > 0, total, 1.0)
    # harmonic mean is taken as 0 at (0, 0)
    return np.where(total > 0, 2.0 * p * q / safe, 0.0)


def aggregate(kind: Aggregator | str, p_scout: float, p_reply: float) -> float:
    return float(aggregate_array(kind, [p_scout], [p_reply])[0])


def rank_by_score(candidates, scores) -> list[int]:
    """Descending score, ties by ascending seeker id."""
    cand = np.asarray(candidates, dtype=np.int64)
    if len(cand) == 0:
        raise ValueError("no candidates")
    return cand[np.lexsort((cand, -np.asarray(scores, dtype=np.float64)))].tolist()


class PtaScorer:
    """Scores a pair by aggregating the two directional predictions."""

    def __init__(self, scout_model, reply_model, kind: Aggregator | str):
        self.scout_model = scout_model
        self.reply_model = reply_model
        self.kind = Aggregator(kind)

    def score_pairs(self, companies, seekers) -> np.ndarray:
        return aggregate_array(
            self.kind,
            self.scout_model.score_pairs(companies, seekers),
            self.reply_model.score_pairs(companies, seekers),
        )


def pta_rank(scout_model, reply_model, kind: Aggregator | str, company: int, candidates) -> list[int]:
    cand = np.asarray(candidates, dtype=np.int64)
    scores = PtaScorer(scout_model, reply_model, kind).score_pairs(
        np.full(len(cand), company, dtype=np.int64), cand
    )
    return rank_by_score(cand, scores)
