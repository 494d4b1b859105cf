"""Synthetic two-sided marketplace with known directional probabilities.

Each direction is a logistic latent-factor model with its own factor pair,
so the true match probability of a pair is ``p_scout * p_reply`` exactly.
Logs follow the exposure -> scout -> reply funnel: a reply is only drawn for
scouted exposures.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.special import expit

from .domain import Dataset

BASE_TIMESTAMP = 1_698_796_800  # 2023-11-01T00:00:00Z
TIME_STEP = 60


@dataclass(frozen=True)
class SynthConfig:
    num_companies: int = 300
    num_seekers: int = 2000
    latent_dim: int = 8
    exposures_per_company: int = 100
    scout_scale: float = -1.2
    reply_scale: float = -1.4
    # lognormal sigma of per-company exposure propensity
    segment_activity_skew: float = 1.4
    bias_scale: float = 1.0
    factor_gain: float = 1.0
    # multiplies reply odds for the least active third of companies (1.0 = off)
    low_segment_reply_factor: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("num_companies", "num_seekers", "latent_dim", "exposures_per_company"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.segment_activity_skew < 0 or self.bias_scale < 0 or self.factor_gain < 0:
            raise ValueError("scales must be non-negative")
        if self.low_segment_reply_factor <= 0:
            raise ValueError("low_segment_reply_factor must be positive")

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ValueError(f"unknown synth option {key!r}")
            out[key] = (int if kinds[key] in ("int", int) else float)(raw)
        return cls(**out)


@dataclass(frozen=True, eq=False)
class MarketGroundTruth:
    scout_company_factors: np.ndarray
    scout_seeker_factors: np.ndarray
    scout_company_bias: np.ndarray
    scout_seeker_bias: np.ndarray
    reply_company_factors: np.ndarray
    reply_seeker_factors: np.ndarray
    reply_company_bias: np.ndarray
    reply_seeker_bias: np.ndarray
    scout_scale: float
    reply_scale: float
    activity_weights: np.ndarray

    @property
    def num_companies(self) -> int:
        return len(self.scout_company_bias)

    @property
    def num_seekers(self) -> int:
        return len(self.scout_seeker_bias)

    def scout_logits(self, companies, seekers) -> np.ndarray:
        u = self.scout_company_factors[companies]
        v = self.scout_seeker_factors[seekers]
        return (
            self.scout_scale
            + self.scout_company_bias[companies]
            + self.scout_seeker_bias[seekers]
            + np.einsum("ij,ij->i", u, v)
        )

    def reply_logits(self, companies, seekers) -> np.ndarray:
        u = self.reply_company_factors[companies]
        v = self.reply_seeker_factors[seekers]
        return (
            self.reply_scale
            + self.reply_company_bias[companies]
            + self.reply_seeker_bias[seekers]
            + np.einsum("ij,ij->i", u, v)
        )

    def p_scout(self, companies, seekers) -> np.ndarray:
        return expit(self.scout_logits(np.asarray(companies), np.asarray(seekers)))

    def p_reply(self, companies, seekers) -> np.ndarray:
        return expit(self.reply_logits(np.asarray(companies), np.asarray(seekers)))

    def match_probability(self, companies, seekers) -> np.ndarray:
        return self.p_scout(companies, seekers) * self.p_reply(companies, seekers)

    def score_pairs(self, companies, seekers) -> np.ndarray:
        return self.match_probability(companies, seekers)


def generate_ground_truth(config: SynthConfig) -> MarketGroundTruth:
    rng = np.random.default_rng(config.rng_seed)
    nc, ns, d = config.num_companies, config.num_seekers, config.latent_dim
    scale = config.factor_gain / np.sqrt(d)

    def factors(n):
        return rng.normal(0.0, scale, size=(n, d))

    def biases(n):
        return rng.normal(0.0, config.bias_scale, size=n)

    scout_u, scout_v = factors(nc), factors(ns)
    scout_bc, scout_bs = biases(nc), biases(ns)
    reply_u, reply_v = factors(nc), factors(ns)
    reply_bc, reply_bs = biases(nc), biases(ns)
    activity = rng.lognormal(0.0, config.segment_activity_skew, size=nc)
    if config.low_segment_reply_factor != 1.0:
        # least active third by propensity, ties to ascending id
        order = np.lexsort((np.arange(nc), -activity))
        low = np.array_split(order, 3)[2]
        reply_bc = reply_bc.copy()
        reply_bc[low] += np.log(config.low_segment_reply_factor)
    return MarketGroundTruth(
        scout_u, scout_v, scout_bc, scout_bs,
        reply_u, reply_v, reply_bc, reply_bs,
        float(config.scout_scale), float(config.reply_scale), activity,
    )


def exposure_counts(truth: MarketGroundTruth, config: SynthConfig) -> np.ndarray:
    """Per-company exposure budget proportional to activity, at least one each."""
    w = truth.activity_weights / truth.activity_weights.sum()
    total = config.exposures_per_company * truth.num_companies
    return np.maximum(1, np.rint(w * total)).astype(np.int64)


def simulate_log(truth: MarketGroundTruth, config: SynthConfig) -> Dataset:
    if (truth.num_companies, truth.num_seekers) != (config.num_companies, config.num_seekers):
        raise ValueError("ground truth and config dimensions differ")
    rng = np.random.default_rng([config.rng_seed, 1])
    counts = exposure_counts(truth, config)
    companies = np.repeat(np.arange(truth.num_companies), counts)
    seekers = rng.integers(0, truth.num_seekers, size=len(companies))
    p_scout = truth.p_scout(companies, seekers)
    p_reply = truth.p_reply(companies, seekers)
    scouts = (rng.random(len(companies)) < p_scout).astype(np.int8)
    replies = ((rng.random(len(companies)) < p_reply) & (scouts == 1)).astype(np.int8)
    # interleave companies over time; one event per tick keeps keys unique
    order = rng.permutation(len(companies))
    timestamps = BASE_TIMESTAMP + TIME_STEP * np.arange(len(companies), dtype=np.int64)
    return Dataset(
        timestamps,
        companies[order],
        seekers[order],
        scouts[order],
        replies[order],
        truth.num_companies,
        truth.num_seekers,
    )


def oracle_rank(truth: MarketGroundTruth, company: int, candidates) -> list[int]:
    """Candidates by descending true match probability, ties by ascending id."""
    cand = np.asarray(candidates, dtype=np.int64)
    if len(cand) == 0:
        raise ValueError("no candidates")
    m = truth.match_probability(np.full(len(cand), company), cand)
    return cand[np.lexsort((cand, -m))].tolist()


def write_truth(
    truth: MarketGroundTruth, path: str | Path, pairs: np.ndarray | None = None
) -> None:
    """Write ``company_id,seeker_id,p_scout,p_reply``; all pairs when ``pairs`` is None."""
    if pairs is None:
        c, s = np.meshgrid(
            np.arange(truth.num_companies), np.arange(truth.num_seekers), indexing="ij"
        )
        pairs = np.stack([c.ravel(), s.ravel()], axis=1)
    pairs = np.unique(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=0)
    ps = truth.p_scout(pairs[:, 0], pairs[:, 1])
    pr = truth.p_reply(pairs[:, 0], pairs[:, 1])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("company_id", "seeker_id", "p_scout", "p_reply"))
        for (c, s), a, b in zip(pairs.tolist(), ps.tolist(), pr.tolist()):
            w.writerow((c, s, repr(a), repr(b)))


def read_truth(path: str | Path) -> dict[tuple[int, int], tuple[float, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {
            (int(r["company_id"]), int(r["seeker_id"])): (float(r["p_scout"]), float(r["p_reply"]))
            for r in csv.DictReader(fh)
        }
