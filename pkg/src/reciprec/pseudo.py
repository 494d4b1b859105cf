"""Pseudo-match scores: blends of realized match labels and predicted matches.

For a pair with realized match label ``m`` and directional predictions
``p`` (scout) and ``q`` (reply), the pseudo-match score is
``alpha * m + (1 - alpha) * p * q``. ``alpha`` is either global or chosen
per company activity segment.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .domain import SEGMENTS, Dataset, Segment, SegmentAssignment
from .learners import match_negatives

PSEUDO_HEADER = ("company_id", "seeker_id", "segment", "true_match", "prediction", "s_pseudo")


class AlphaMode(str, Enum):
    GLOBAL = "global"
    PER_SEGMENT = "per-segment"


def _check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("invalid weight")
    return float(alpha)


@dataclass(frozen=True)
class AlphaPolicy:
    mode: AlphaMode = AlphaMode.GLOBAL
    global_alpha: float = 0.0
    segment_alphas: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mode", AlphaMode(self.mode))
        _check_alpha(self.global_alpha)
        alphas = {Segment(k): _check_alpha(v) for k, v in self.segment_alphas.items()}
        if self.mode is AlphaMode.PER_SEGMENT and set(alphas) != set(SEGMENTS):
            raise ValueError("per-segment policy needs an alpha for High, Middle and Low")
        object.__setattr__(self, "segment_alphas", alphas)

    @classmethod
    def global_(cls, alpha: float) -> "AlphaPolicy":
        return cls(AlphaMode.GLOBAL, alpha)

    @classmethod
    def per_segment(cls, high: float, middle: float, low: float) -> "AlphaPolicy":
        return cls(
            AlphaMode.PER_SEGMENT,
            0.0,
            {Segment.HIGH: high, Segment.MIDDLE: middle, Segment.LOW: low},
        )

    def segment_vector(self) -> np.ndarray:
        """Alpha indexed by segment code (0=High, 1=Middle, 2=Low)."""
        if self.mode is AlphaMode.GLOBAL:
            return np.full(3, self.global_alpha)
        return np.array([self.segment_alphas[s] for s in SEGMENTS])

    def label(self) -> str:
        if self.mode is AlphaMode.GLOBAL:
            return f"global alpha={self.global_alpha:.2f}"
        return "per-segment " + ", ".join(
            f"{s.value}={self.segment_alphas[s]:.2f}" for s in SEGMENTS
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "mode": self.mode.value,
                "global_alpha": self.global_alpha,
                "segment_alphas": {s.value: a for s, a in self.segment_alphas.items()},
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "AlphaPolicy":
        raw = json.loads(text)
        return cls(raw["mode"], raw["global_alpha"], raw.get("segment_alphas", {}))


def pseudo_score(true_match: int, p_scout_hat: float, p_reply_hat: float, alpha: float) -> float:
    _check_alpha(alpha)
    if not (0.0 <= p_scout_hat <= 1.0 and 0.0 <= p_reply_hat <= 1.0):
        raise ValueError("invalid probability")
    return alpha * true_match + (1.0 - alpha) * (p_scout_hat * p_reply_hat)


def resolve_alpha(policy: AlphaPolicy, segments: SegmentAssignment, company: int) -> float:
    if policy.mode is AlphaMode.GLOBAL:
        return policy.global_alpha
    return policy.segment_alphas[segments[company]]


@dataclass(frozen=True, eq=False)
class PseudoLabelSet:
    companies: np.ndarray
    seekers: np.ndarray
    segments: np.ndarray  # segment codes, 0=High 1=Middle 2=Low
    true_match: np.ndarray
    prediction: np.ndarray
    s_pseudo: np.ndarray

    def __len__(self) -> int:
        return len(self.companies)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PSEUDO_HEADER)
            for c, s, g, m, p, t in zip(
                self.companies.tolist(),
                self.seekers.tolist(),
                self.segments.tolist(),
                self.true_match.tolist(),
                self.prediction.tolist(),
                self.s_pseudo.tolist(),
            ):
                w.writerow((c, s, SEGMENTS[g].value, m, repr(p), repr(t)))

    @classmethod
    def read_csv(cls, path: str | Path) -> "PseudoLabelSet":
        cols = {k: [] for k in PSEUDO_HEADER}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                for k in PSEUDO_HEADER:
                    cols[k].append(row[k])
        codes = {s.value: i for i, s in enumerate(SEGMENTS)}
        return cls(
            np.array(cols["company_id"], dtype=np.int64),
            np.array(cols["seeker_id"], dtype=np.int64),
            np.array([codes[g] for g in cols["segment"]], dtype=np.int64),
            np.array(cols["true_match"], dtype=np.int8),
            np.array([float(x) for x in cols["prediction"]]),
            np.array([float(x) for x in cols["s_pseudo"]]),
        )


def build_pseudo_labels(
    train: Dataset,
    scout_model,
    reply_model,
    policy: AlphaPolicy,
    segments: SegmentAssignment,
    negatives_per_positive: int = 1,
    rng_seed: int = 0,
) -> PseudoLabelSet:
    """One row per training exposure, then one per sampled unexposed pair.

    The unexposed pairs are the same ones the direct match model samples for
    the same seed, so both learners see an identical pair universe.
    """
    (neg_c, neg_s), _ = match_negatives(train, negatives_per_positive, rng_seed)
    cs = np.concatenate([train.companies, neg_c])
    js = np.concatenate([train.seekers, neg_s])
    m = np.concatenate([train.matches, np.zeros(len(neg_c), dtype=np.int8)])
    pred = scout_model.score_pairs(cs, js) * reply_model.score_pairs(cs, js)
    seg = segments.codes(train.num_companies)[cs]
    if policy.mode is AlphaMode.PER_SEGMENT:
        missing = [c for c in np.unique(cs).tolist() if c not in segments]
        if missing:
            raise KeyError("unassigned company")
    alpha = policy.segment_vector()[seg]
    target = alpha * m + (1.0 - alpha) * pred
    return PseudoLabelSet(cs, js, seg, m, pred, target)
