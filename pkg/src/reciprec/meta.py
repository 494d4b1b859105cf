"""Gradient-boosted regression trees trained on pseudo-match scores.

Boosting uses squared error: the ensemble starts at the mean target and each
round fits a depth-limited tree to the current residuals of a row subsample.
Splits are exact greedy: every boundary between consecutive distinct values
of every feature is tried, scored by variance reduction, and the lowest
feature index wins ties. Prediction is clamped to [0, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .aggregate import aggregate_array, rank_by_score
from .domain import Dataset, SegmentAssignment

_log = logging.getLogger(__name__)

GBDT_FORMAT = "reciprec-gbdt 1"

FEATURE_SPEC = (
    "p_scout",
    "p_reply",
    "p_product",
    "p_harmonic",
    "company_scouts",
    "company_reply_rate",
    "seeker_exposures",
    "seeker_reply_rate",
    "segment_high",
    "segment_middle",
    "segment_low",
)

_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class GbdtConfig:
    num_trees: int = 300
    max_depth: int = 4
    min_samples_leaf: int = 20
    shrinkage: float = 0.1
    subsample_fraction: float = 0.8
    rng_seed: int = 0
    loss: str = "squared-error"

    def __post_init__(self):
        if self.num_trees < 0 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("num_trees >= 0, max_depth >= 1, min_samples_leaf >= 1 required")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must be in (0, 1]")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must be in (0, 1]")
        if self.loss != "squared-error":
            raise ValueError(f"unsupported loss {self.loss!r}")


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf, node 0 is the root."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __len__(self) -> int:
        return len(self.feature)


@dataclass(eq=False)
class GbdtModel:
    trees: list[Tree]
    shrinkage: float
    base_score: float
    feature_spec: tuple[str, ...] = FEATURE_SPEC
    train_loss: list[float] = field(default_factory=list)

    def raw_predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_spec):
            raise ValueError(f"expected {len(self.feature_spec)} features")
        total = np.zeros(len(X))
        for t in self.trees:
            total += _tree_predict(X, t.feature, t.threshold, t.left, t.right, t.value)
        return self.base_score + self.shrinkage * total

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.clip(self.raw_predict(X), 0.0, 1.0)

    def save(self, path: str | Path) -> None:
        save_gbdt(self, path)


@njit(cache=True, nogil=True)
def _tree_predict(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        k = 0
        while feature[k] >= 0:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = value[k]
    return out


@njit(cache=True, nogil=True)
def _grow_tree(X, resid, in_sample, orders, sorted_vals, max_depth, min_leaf, min_gain):
    n, nf = X.shape
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    node_of = np.full(n, -1, np.int64)
    node_n = np.zeros(cap)
    node_s = np.zeros(cap)
    for i in range(n):
        if in_sample[i]:
            node_of[i] = 0
            node_n[0] += 1.0
            node_s[0] += resid[i]
    n_nodes = 1
    level_lo, level_hi = 0, 1
    for depth in range(max_depth):
        best_gain = np.empty(cap)
        for k in range(level_lo, level_hi):
            # a split must beat the unsplit node by more than min_gain
            best_gain[k] = node_s[k] * node_s[k] / max(node_n[k], 1.0) + min_gain
        best_feat = np.full(cap, -1, np.int64)
        best_thr = np.zeros(cap)
        cnt = np.zeros(cap)
        acc = np.zeros(cap)
        last = np.zeros(cap)
        for f in range(nf):
            for k in range(level_lo, level_hi):
                cnt[k] = 0.0
                acc[k] = 0.0
            order = orders[f]
            vals = sorted_vals[f]
            for t in range(n):
                i = order[t]
                k = node_of[i]
                if k < level_lo:
                    continue
                v = vals[t]
                nl = cnt[k]
                if nl >= min_leaf and v != last[k] and node_n[k] - nl >= min_leaf:
                    sl = acc[k]
                    sr = node_s[k] - sl
                    # variance reduction minus the per-node constant S^2/N
                    gain = sl * sl / nl + sr * sr / (node_n[k] - nl)
                    if gain > best_gain[k]:
                        best_gain[k] = gain
                        best_feat[k] = f
                        mid = 0.5 * (last[k] + v)
                        best_thr[k] = mid if mid < v else last[k]
                cnt[k] += 1.0
                acc[k] += resid[i]
                last[k] = v
        next_lo = n_nodes
        for k in range(level_lo, level_hi):
            if best_feat[k] >= 0:
                feature[k] = best_feat[k]
                threshold[k] = best_thr[k]
                left[k] = n_nodes
                right[k] = n_nodes + 1
                n_nodes += 2
        if n_nodes == next_lo:
            break
        for i in range(n):
            k = node_of[i]
            if k >= level_lo and feature[k] >= 0:
                child = left[k] if X[i, feature[k]] <= threshold[k] else right[k]
                node_of[i] = child
                node_n[child] += 1.0
                node_s[child] += resid[i]
        level_lo, level_hi = next_lo, n_nodes
    for k in range(n_nodes):
        if feature[k] < 0 and node_n[k] > 0:
            value[k] = node_s[k] / node_n[k]
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


def fit_gbdt(
    X: np.ndarray, y: np.ndarray, cfg: GbdtConfig, feature_spec=FEATURE_SPEC
) -> GbdtModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("no training rows")
    if X.shape != (len(y), len(feature_spec)):
        raise ValueError("feature matrix does not match feature_spec")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite training data")
    if np.all(y == y[0]):
        return GbdtModel([], cfg.shrinkage, float(y[0]), tuple(feature_spec), [0.0])
    rng = np.random.default_rng([cfg.rng_seed, 21])
    n = len(y)
    orders = np.ascontiguousarray(
        np.stack([np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])])
    )
    sorted_vals = np.ascontiguousarray(np.take_along_axis(X.T, orders, axis=1))
    base = float(np.mean(y))
    pred = np.full(n, base)
    k_sub = max(1, int(round(cfg.subsample_fraction * n)))
    trees = []
    history = [float(np.mean((y - pred) ** 2))]
    for _ in range(cfg.num_trees):
        resid = y - pred
        if cfg.subsample_fraction < 1.0:
            in_sample = np.zeros(n, dtype=np.bool_)
            in_sample[rng.permutation(n)[:k_sub]] = True
        else:
            in_sample = np.ones(n, dtype=np.bool_)
        tree = Tree(*_grow_tree(X, resid, in_sample, orders, sorted_vals, cfg.max_depth,
                                float(cfg.min_samples_leaf), _MIN_GAIN))
        trees.append(tree)
        pred = pred + cfg.shrinkage * _tree_predict(
            X, tree.feature, tree.threshold, tree.left, tree.right, tree.value
        )
        history.append(float(np.mean((y - pred) ** 2)))
    _log.debug("boosted %d trees, mse %.3g -> %.3g", len(trees), history[0], history[-1])
    return GbdtModel(trees, cfg.shrinkage, base, tuple(feature_spec), history)


class FeatureContext:
    """Per-pair meta features derived from the training window and the directional models."""

    def __init__(self, train: Dataset, scout_model, reply_model, segments: SegmentAssignment):
        nc, ns = train.num_companies, train.num_seekers
        self.num_companies, self.num_seekers = nc, ns
        self.scout_model = scout_model
        self.reply_model = reply_model
        scouts = train.scouts.astype(np.float64)
        replies = train.replies.astype(np.float64)
        self.company_scouts = np.bincount(train.companies, weights=scouts, minlength=nc)
        company_replies = np.bincount(train.companies, weights=replies, minlength=nc)
        self.company_reply_rate = _rate(company_replies, self.company_scouts)
        self.seeker_exposures = np.bincount(train.seekers, minlength=ns).astype(np.float64)
        seeker_scouts = np.bincount(train.seekers, weights=scouts, minlength=ns)
        seeker_replies = np.bincount(train.seekers, weights=replies, minlength=ns)
        self.seeker_reply_rate = _rate(seeker_replies, seeker_scouts)
        self.segment_codes = segments.codes(nc)

    def features(self, companies, seekers) -> np.ndarray:
        cs = np.asarray(companies, dtype=np.int64)
        js = np.asarray(seekers, dtype=np.int64)
        if len(cs) and (
            cs.min() < 0 or cs.max() >= self.num_companies or js.min() < 0 or js.max() >= self.num_seekers
        ):
            raise ValueError("unknown entity")
        p = self.scout_model.score_pairs(cs, js)
        q = self.reply_model.score_pairs(cs, js)
        onehot = np.zeros((len(cs), 3))
        onehot[np.arange(len(cs)), self.segment_codes[cs]] = 1.0
        return np.column_stack(
            [
                p,
                q,
                aggregate_array("multiplication", p, q),
                aggregate_array("harmonic-mean", p, q),
                self.company_scouts[cs],
                self.company_reply_rate[cs],
                self.seeker_exposures[js],
                self.seeker_reply_rate[js],
                onehot,
            ]
        )


def _rate(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def featurize(context: FeatureContext, pair: tuple[int, int]) -> np.ndarray:
    return context.features([pair[0]], [pair[1]])[0]


def train_meta(labels, context: FeatureContext, cfg: GbdtConfig) -> GbdtModel:
    if len(labels) == 0:
        raise ValueError("no pseudo labels")
    X = context.features(labels.companies, labels.seekers)
    return fit_gbdt(X, labels.s_pseudo, cfg)


class BobScorer:
    """Meta-model predictions as a pair scorer."""

    def __init__(self, model: GbdtModel, context: FeatureContext):
        self.model = model
        self.context = context
        self.num_companies = context.num_companies
        self.num_seekers = context.num_seekers

    def score_pairs(self, companies, seekers) -> np.ndarray:
        return self.model.predict(self.context.features(companies, seekers))


def bob_rank(model: GbdtModel, context: FeatureContext, company: int, candidates) -> list[int]:
    cand = np.asarray(candidates, dtype=np.int64)
    scores = BobScorer(model, context).score_pairs(np.full(len(cand), company), cand)
    return rank_by_score(cand, scores)


def save_gbdt(model: GbdtModel, path: str | Path) -> None:
    """Text layout::

        reciprec-gbdt 1
        base_score <float>
        shrinkage <float>
        features <name> <name> ...
        trees <count>
        tree <index> <node count>
        split <feature index> <threshold>   # followed by left subtree, then right
        leaf <value>

    Nodes of each tree are listed in preorder; floats are written with
    ``repr`` so predictions survive a round trip bit for bit.
    """
    lines = [
        GBDT_FORMAT,
        f"base_score {model.base_score!r}",
        f"shrinkage {model.shrinkage!r}",
        "features " + " ".join(model.feature_spec),
        f"trees {len(model.trees)}",
    ]
    for idx, t in enumerate(model.trees):
        lines.append(f"tree {idx} {len(t)}")
        stack = [0]
        while stack:
            k = stack.pop()
            if t.feature[k] < 0:
                lines.append(f"leaf {float(t.value[k])!r}")
            else:
                lines.append(f"split {int(t.feature[k])} {float(t.threshold[k])!r}")
                stack.append(int(t.right[k]))
                stack.append(int(t.left[k]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_gbdt(path: str | Path) -> GbdtModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != GBDT_FORMAT:
        raise ValueError(f"{path}: not a {GBDT_FORMAT} file")
    base = float(lines[1].split()[1])
    shrinkage = float(lines[2].split()[1])
    spec = tuple(lines[3].split()[1:])
    n_trees = int(lines[4].split()[1])
    pos = 5
    trees = []
    for _ in range(n_trees):
        _, _, count = lines[pos].split()
        count = int(count)
        body = lines[pos + 1 : pos + 1 + count]
        pos += 1 + count
        feature = np.full(count, -1, np.int64)
        threshold = np.zeros(count)
        left = np.full(count, -1, np.int64)
        right = np.full(count, -1, np.int64)
        value = np.zeros(count)
        # preorder: node k's left child is k + 1; right child follows the left subtree
        open_splits = []
        for k, line in enumerate(body):
            kind, *rest = line.split()
            if open_splits and left[open_splits[-1]] < 0:
                left[open_splits[-1]] = k
            elif open_splits:
                right[open_splits.pop()] = k
            if kind == "split":
                feature[k] = int(rest[0])
                threshold[k] = float(rest[1])
                if not 0 <= feature[k] < len(spec):
                    raise ValueError(f"{path}: split on unknown feature {feature[k]}")
                open_splits.append(k)
            elif kind == "leaf":
                value[k] = float(rest[0])
            else:
                raise ValueError(f"{path}: bad node line {line!r}")
        trees.append(Tree(feature, threshold, left, right, value))
    return GbdtModel(trees, shrinkage, base, spec)
