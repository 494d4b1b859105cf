"""Logistic matrix-factorization scorers for scout, reply and match labels.

All three learners share one SGD routine over ``(company, seeker, label)``
rows; they differ only in which rows they see:

* scout model: every exposure (label = scout) plus sampled unexposed pairs;
* reply model: scouted exposures only (label = reply), no sampled negatives;
* DMP model: every exposure (label = match) plus sampled unexposed pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from numba import njit
from scipy.special import expit

from .domain import Dataset

_log = logging.getLogger(__name__)

MF_FORMAT = "reciprec-mf 1"


class PairScoreModel(Protocol):
    def score_pairs(self, companies: np.ndarray, seekers: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class TrainConfig:
    latent_dim: int = 8
    learning_rate: float = 0.05
    l2_regularization: float = 0.05
    epochs: int = 20
    negatives_per_positive: int = 1
    rng_seed: int = 0
    loss: str = "binary-cross-entropy"

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if self.learning_rate <= 0 or self.l2_regularization < 0:
            raise ValueError("learning_rate must be positive, l2_regularization non-negative")
        if self.epochs < 0 or self.negatives_per_positive < 0:
            raise ValueError("epochs and negatives_per_positive must be non-negative")
        if self.loss != "binary-cross-entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")


@dataclass(eq=False)
class MfModel:
    company_factors: np.ndarray
    seeker_factors: np.ndarray
    company_bias: np.ndarray
    seeker_bias: np.ndarray
    global_bias: float
    loss_history: list[float] = field(default_factory=list)

    @property
    def num_companies(self) -> int:
        return self.company_factors.shape[0]

    @property
    def num_seekers(self) -> int:
        return self.seeker_factors.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.company_factors.shape[1]

    def logits(self, companies: np.ndarray, seekers: np.ndarray) -> np.ndarray:
        return _logits(
            np.asarray(companies, dtype=np.int64),
            np.asarray(seekers, dtype=np.int64),
            self.company_factors,
            self.seeker_factors,
            self.company_bias,
            self.seeker_bias,
            self.global_bias,
        )

    def score_pairs(self, companies: np.ndarray, seekers: np.ndarray) -> np.ndarray:
        return expit(self.logits(companies, seekers))

    def score(self, company: int, seeker: int) -> float:
        return float(self.score_pairs(np.array([company]), np.array([seeker]))[0])

    def save(self, path: str | Path) -> None:
        save_mf(self, path)


@njit(cache=True, nogil=True)
def _logits(cs, js, U, V, bc, bs, gb):
    out = np.empty(len(cs))
    d = U.shape[1]
    for i in range(len(cs)):
        c, j = cs[i], js[i]
        x = gb + bc[c] + bs[j]
        for k in range(d):
            x += U[c, k] * V[j, k]
        out[i] = x
    return out


@njit(cache=True, nogil=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


@njit(cache=True, nogil=True)
def _sgd_epoch(cs, js, ys, order, U, V, bc, bs, gb, lr, reg):
    d = U.shape[1]
    for t in range(len(order)):
        i = order[t]
        c, j = cs[i], js[i]
        x = gb[0] + bc[c] + bs[j]
        for k in range(d):
            x += U[c, k] * V[j, k]
        g = _sigmoid(x) - ys[i]
        gb[0] -= lr * g
        bc[c] -= lr * (g + reg * bc[c])
        bs[j] -= lr * (g + reg * bs[j])
        for k in range(d):
            u = U[c, k]
            v = V[j, k]
            U[c, k] = u - lr * (g * v + reg * u)
            V[j, k] = v - lr * (g * u + reg * v)


@njit(cache=True, nogil=True)
def _objective(cs, js, ys, U, V, bc, bs, gb, reg):
    """Mean of per-row cross-entropy plus the L2 terms SGD applies per row."""
    d = U.shape[1]
    total = 0.0
    for i in range(len(cs)):
        c, j = cs[i], js[i]
        x = gb + bc[c] + bs[j]
        pen = bc[c] * bc[c] + bs[j] * bs[j]
        for k in range(d):
            x += U[c, k] * V[j, k]
            pen += U[c, k] * U[c, k] + V[j, k] * V[j, k]
        # log(1 + e^x) - y x, computed stably
        if x > 0:
            sp = x + np.log1p(np.exp(-x))
        else:
            sp = np.log1p(np.exp(x))
        total += sp - ys[i] * x + 0.5 * reg * pen
    return total / max(len(cs), 1)


def init_model(num_companies: int, num_seekers: int, cfg: TrainConfig, rng) -> MfModel:
    d = cfg.latent_dim
    lim = 0.5 / np.sqrt(d)
    return MfModel(
        rng.uniform(-lim, lim, size=(num_companies, d)),
        rng.uniform(-lim, lim, size=(num_seekers, d)),
        np.zeros(num_companies),
        np.zeros(num_seekers),
        0.0,
    )


def sample_unexposed(
    dataset: Dataset, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform draws (with replacement) from pairs never exposed in ``dataset``."""
    nc, ns = dataset.num_companies, dataset.num_seekers
    exposed = np.unique(dataset.companies * ns + dataset.seekers)
    if count <= 0 or len(exposed) >= nc * ns:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    out = []
    need = count
    while need > 0:
        draw = rng.integers(0, nc * ns, size=int(need * 1.2) + 16)
        keep = draw[~np.isin(draw, exposed)]
        out.append(keep[:need])
        need -= len(out[-1])
    keys = np.concatenate(out)
    return keys // ns, keys % ns


def fit_rows(
    companies: np.ndarray,
    seekers: np.ndarray,
    labels: np.ndarray,
    num_companies: int,
    num_seekers: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> MfModel:
    """Plain SGD on binary cross-entropy over the given rows."""
    model = init_model(num_companies, num_seekers, cfg, rng)
    cs = np.ascontiguousarray(companies, dtype=np.int64)
    js = np.ascontiguousarray(seekers, dtype=np.int64)
    ys = np.ascontiguousarray(labels, dtype=np.float64)
    gb = np.array([model.global_bias])
    args = (model.company_factors, model.seeker_factors, model.company_bias, model.seeker_bias)
    reg = cfg.l2_regularization
    history = [_objective(cs, js, ys, *args, gb[0], reg)]
    for _ in range(cfg.epochs):
        order = rng.permutation(len(cs))
        _sgd_epoch(cs, js, ys, order, *args, gb, cfg.learning_rate, reg)
        history.append(_objective(cs, js, ys, *args, gb[0], reg))
    model.global_bias = float(gb[0])
    model.loss_history = history
    _log.debug("trained MF on %d rows, loss %.5f -> %.5f", len(cs), history[0], history[-1])
    return model


MATCH_STREAM = 13


def match_negatives(train: Dataset, negatives_per_positive: int, rng_seed: int):
    """The unexposed pairs the match-level learners (DMP, meta-model) train on."""
    rng = np.random.default_rng([rng_seed, MATCH_STREAM])
    n_pos = int(train.matches.sum())
    return sample_unexposed(train, negatives_per_positive * n_pos, rng), rng


def _with_negatives(train: Dataset, labels: np.ndarray, cfg: TrainConfig, rng):
    n_pos = int(labels.sum())
    neg_c, neg_s = sample_unexposed(train, cfg.negatives_per_positive * n_pos, rng)
    return _stack(train, labels, neg_c, neg_s)


def _stack(train: Dataset, labels: np.ndarray, neg_c: np.ndarray, neg_s: np.ndarray):
    cs = np.concatenate([train.companies, neg_c])
    js = np.concatenate([train.seekers, neg_s])
    ys = np.concatenate([labels.astype(np.float64), np.zeros(len(neg_c))])
    return cs, js, ys


def train_scout_model(train: Dataset, cfg: TrainConfig) -> MfModel:
    if len(train) == 0:
        raise ValueError("empty training data")
    labels = train.scouts
    if labels.sum() == 0:
        raise ValueError("degenerate labels")
    rng = np.random.default_rng([cfg.rng_seed, 11])
    cs, js, ys = _with_negatives(train, labels, cfg, rng)
    return fit_rows(cs, js, ys, train.num_companies, train.num_seekers, cfg, rng)


def train_reply_model(train: Dataset, cfg: TrainConfig) -> MfModel:
    scouted = train.scouts == 1
    if not scouted.any():
        raise ValueError("no reply observations")
    labels = train.replies[scouted]
    if labels.sum() == 0:
        raise ValueError("degenerate labels")
    rng = np.random.default_rng([cfg.rng_seed, 12])
    return fit_rows(
        train.companies[scouted],
        train.seekers[scouted],
        labels,
        train.num_companies,
        train.num_seekers,
        cfg,
        rng,
    )


def train_dmp_model(train: Dataset, cfg: TrainConfig) -> MfModel:
    if len(train) == 0:
        raise ValueError("empty training data")
    labels = train.matches
    if labels.sum() == 0:
        raise ValueError("degenerate labels")
    (neg_c, neg_s), rng = match_negatives(train, cfg.negatives_per_positive, cfg.rng_seed)
    cs, js, ys = _stack(train, labels, neg_c, neg_s)
    return fit_rows(cs, js, ys, train.num_companies, train.num_seekers, cfg, rng)


def score_pairs(model, pairs: Sequence[tuple[int, int]]) -> list[float]:
    """Batch scoring with id validation; element order follows ``pairs``."""
    if len(pairs) == 0:
        return []
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    nc = getattr(model, "num_companies", None)
    ns = getattr(model, "num_seekers", None)
    if arr.min() < 0 or (nc is not None and arr[:, 0].max() >= nc) or (
        ns is not None and arr[:, 1].max() >= ns
    ):
        raise ValueError("unknown entity")
    return model.score_pairs(arr[:, 0], arr[:, 1]).tolist()


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_mf(model: MfModel, path: str | Path) -> None:
    """Text layout: version line, ``dims nc ns d``, global bias, then blocks.

    Each block is a title line followed by rows of space-separated floats:
    ``company_bias`` (one row), ``seeker_bias`` (one row), ``company_factors``
    (nc rows), ``seeker_factors`` (ns rows). Floats use ``repr`` so they
    round-trip exactly.
    """
    lines = [
        MF_FORMAT,
        f"dims {model.num_companies} {model.num_seekers} {model.latent_dim}",
        f"global_bias {model.global_bias!r}",
        "company_bias",
        _fmt(model.company_bias),
        "seeker_bias",
        _fmt(model.seeker_bias),
        "company_factors",
        *(_fmt(r) for r in model.company_factors),
        "seeker_factors",
        *(_fmt(r) for r in model.seeker_factors),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mf(path: str | Path) -> MfModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MF_FORMAT:
        raise ValueError(f"{path}: not a {MF_FORMAT} file")
    _, nc, ns, d = lines[1].split()
    nc, ns, d = int(nc), int(ns), int(d)
    gb = float(lines[2].split()[1])

    def vec(line):
        return np.array([float(x) for x in line.split()], dtype=np.float64)

    def expect(i, title):
        if lines[i] != title:
            raise ValueError(f"{path}: expected {title!r} at line {i + 1}")

    expect(3, "company_bias")
    bc = vec(lines[4])
    expect(5, "seeker_bias")
    bs = vec(lines[6])
    expect(7, "company_factors")
    U = np.array([vec(x) for x in lines[8 : 8 + nc]]).reshape(nc, d)
    expect(8 + nc, "seeker_factors")
    V = np.array([vec(x) for x in lines[9 + nc : 9 + nc + ns]]).reshape(ns, d)
    if bc.shape != (nc,) or bs.shape != (ns,):
        raise ValueError(f"{path}: bias length does not match dims")
    return MfModel(U, V, bc, bs, gb)
