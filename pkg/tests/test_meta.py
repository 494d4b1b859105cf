import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from oracles import mse, sort_oracle
from reciprec.domain import Segment, assign_segments
from reciprec.learners import TrainConfig, train_reply_model, train_scout_model
from reciprec.meta import (
    FEATURE_SPEC,
    BobScorer,
    FeatureContext,
    GbdtConfig,
    GbdtModel,
    bob_rank,
    featurize,
    fit_gbdt,
    load_gbdt,
    train_meta,
)
from reciprec.pseudo import AlphaPolicy, build_pseudo_labels

SPEC1 = ("x",)


def exact(**kw):
    base = dict(num_trees=1, max_depth=1, min_samples_leaf=1, shrinkage=1.0, subsample_fraction=1.0)
    base.update(kw)
    return GbdtConfig(**base)


def best_stump(X, y, min_leaf=1):
    """Brute-force lowest-SSE split: (feature, threshold), lowest feature first on ties."""
    best = (np.sum((y - y.mean()) ** 2), None, None)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2
            left = X[:, f] <= thr
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            sse = np.sum((y[left] - y[left].mean()) ** 2) + np.sum((y[~left] - y[~left].mean()) ** 2)
            if sse < best[0] - 1e-12:
                best = (sse, f, thr)
    return best[1], best[2]


def test_constant_targets():
    X = np.random.default_rng(0).random((30, 1))
    model = fit_gbdt(X, np.full(30, 0.3), GbdtConfig(), SPEC1)
    assert model.trees == []
    assert np.all(model.predict(np.random.default_rng(1).random((10, 1))) == 0.3)


def test_step_function_recovered():
    x = np.linspace(0, 1, 400).reshape(-1, 1)
    y = (x[:, 0] > 0.5).astype(float)
    model = fit_gbdt(x, y, exact(num_trees=200), SPEC1)
    assert mse(model.predict(x), y) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_stump_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    X = np.round(rng.random((60, 3)), 2)
    y = rng.random(60)
    model = fit_gbdt(X, y, exact(), ("a", "b", "c"))
    f, thr = best_stump(X, y)
    root = model.trees[0]
    assert (int(root.feature[0]), root.threshold[0]) == (f, pytest.approx(thr, abs=0))
    left = X[:, f] <= thr
    pred = model.raw_predict(X)
    assert np.allclose(pred[left], y[left].mean(), atol=1e-12)
    assert np.allclose(pred[~left], y[~left].mean(), atol=1e-12)


def test_min_leaf_respected():
    rng = np.random.default_rng(3)
    X, y = rng.random((50, 2)), rng.random(50)
    model = fit_gbdt(X, y, exact(min_samples_leaf=20), ("a", "b"))
    f, thr = best_stump(X, y, min_leaf=20)
    assert int(model.trees[0].feature[0]) == f and model.trees[0].threshold[0] == thr


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_non_increasing_full_sample(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((200, 4))
    y = np.clip(X[:, 0] * X[:, 1] + 0.1 * rng.standard_normal(200), 0, 1)
    model = fit_gbdt(X, y, GbdtConfig(num_trees=30, max_depth=3, min_samples_leaf=5, subsample_fraction=1.0),
                     ("a", "b", "c", "d"))
    assert len(model.train_loss) == 31
    assert np.all(np.diff(model.train_loss) <= 1e-15)
    assert model.train_loss[-1] == pytest.approx(mse(model.raw_predict(X), y), rel=1e-9)


def test_piecewise_constant():
    rng = np.random.default_rng(4)
    X, y = rng.random((300, 2)), rng.random(300)
    model = fit_gbdt(X, y, GbdtConfig(num_trees=20, max_depth=3, min_samples_leaf=5), ("a", "b"))
    thresholds = np.concatenate([t.threshold[t.feature == 0] for t in model.trees])
    x0 = 0.5 * (np.sort(thresholds)[0] + np.sort(thresholds)[1])
    gap = np.sort(np.abs(thresholds - x0))[0]
    a = np.array([[x0, 0.3]])
    b = np.array([[x0 + 0.5 * gap * np.sign(np.sort(thresholds)[1] - x0), 0.3]])
    assert model.predict(a)[0] == model.predict(b)[0]


def test_base_score_and_clamp():
    X = np.array([[0.0], [1.0]] * 10)
    y = np.array([0.0, 1.0] * 10)
    model = fit_gbdt(X, y, exact(num_trees=3), SPEC1)
    assert model.base_score == 0.5
    over = GbdtModel(model.trees, 5.0, 0.5, SPEC1)
    assert over.predict(X).min() == 0.0 and over.predict(X).max() == 1.0


def test_subsample_deterministic_and_seeded():
    rng = np.random.default_rng(5)
    X, y = rng.random((200, 2)), rng.random(200)
    cfg = GbdtConfig(num_trees=10, max_depth=2, min_samples_leaf=5, subsample_fraction=0.5, rng_seed=1)
    a, b = fit_gbdt(X, y, cfg, ("a", "b")), fit_gbdt(X, y, cfg, ("a", "b"))
    assert np.array_equal(a.raw_predict(X), b.raw_predict(X))
    c = fit_gbdt(X, y, GbdtConfig(num_trees=10, max_depth=2, min_samples_leaf=5, subsample_fraction=0.5,
                                  rng_seed=2), ("a", "b"))
    assert not np.array_equal(a.raw_predict(X), c.raw_predict(X))


def test_config_validation():
    for bad in (dict(shrinkage=0.0), dict(subsample_fraction=1.5), dict(max_depth=0), dict(loss="huber")):
        with pytest.raises(ValueError):
            GbdtConfig(**bad)


def test_save_load_bitwise(tmp_path):
    rng = np.random.default_rng(6)
    X, y = rng.random((500, 11)), rng.random(500)
    model = fit_gbdt(X, y, GbdtConfig(num_trees=25, max_depth=4, min_samples_leaf=10))
    model.save(tmp_path / "m.gbdt")
    back = load_gbdt(tmp_path / "m.gbdt")
    Z = rng.random((1000, 11))
    assert np.array_equal(back.raw_predict(Z), model.raw_predict(Z))
    assert back.feature_spec == FEATURE_SPEC
    for t in back.trees:
        assert np.all((t.feature == -1) | ((t.feature >= 0) & (t.feature < 11)))
        assert np.all(np.isfinite(t.value))


class Table:
    def __init__(self, p):
        self.p = p

    def score_pairs(self, companies, seekers):
        return np.full(len(companies), self.p)


def toy_context():
    train = make_dataset([(0, 0, 1, 1), (0, 1, 1, 0), (1, 1, 1, 1), (0, 2, 0, 0)], 4, 4)
    return FeatureContext(train, Table(0.4), Table(0.5), assign_segments(train)), train


def test_featurize_arithmetic():
    ctx, _ = toy_context()
    v = featurize(ctx, (0, 1))
    assert v[2] == pytest.approx(0.20, abs=1e-15)
    assert v[3] == pytest.approx(4 / 9, abs=1e-15)
    assert list(v[4:8]) == [2.0, 0.5, 2.0, 0.5]


def test_featurize_unseen_company():
    ctx, _ = toy_context()
    v = featurize(ctx, (3, 3))
    assert list(v[4:8]) == [0.0, 0.0, 0.0, 0.0]
    assert list(v[8:]) == [0.0, 0.0, 1.0]
    with pytest.raises(ValueError, match="unknown entity"):
        featurize(ctx, (4, 0))


def test_feature_matrix_matches_recomputation(small_market):
    _, _, _, split, seg = small_market
    train = split.train
    cfg = TrainConfig(epochs=3, rng_seed=2)
    scout, reply = train_scout_model(train, cfg), train_reply_model(train, cfg)
    ctx = FeatureContext(train, scout, reply, seg)
    rng = np.random.default_rng(8)
    cs, js = rng.integers(0, 40, 20), rng.integers(0, 200, 20)
    X = ctx.features(cs, js)
    events = list(train)
    for row, c, j in zip(X, cs.tolist(), js.tolist()):
        p, q = scout.score(c, j), reply.score(c, j)
        c_scouts = sum(e.scout_sent for e in events if e.company == c)
        c_replies = sum(e.replied for e in events if e.company == c)
        j_exp = sum(1 for e in events if e.seeker == j)
        j_scouts = sum(e.scout_sent for e in events if e.seeker == j)
        j_replies = sum(e.replied for e in events if e.seeker == j)
        onehot = [1.0 if seg[c] is s else 0.0 for s in (Segment.HIGH, Segment.MIDDLE, Segment.LOW)]
        expected = [p, q, p * q, 2 * p * q / (p + q), c_scouts, c_replies / c_scouts if c_scouts else 0.0,
                    j_exp, j_replies / j_scouts if j_scouts else 0.0, *onehot]
        assert row.tolist() == pytest.approx(expected, rel=1e-12, abs=0)


def test_bob_rank():
    ctx, _ = toy_context()
    const = GbdtModel([], 0.1, 0.42)
    assert bob_rank(const, ctx, 0, [2]) == [2]
    assert bob_rank(const, ctx, 0, [3, 0, 2, 1]) == [0, 1, 2, 3]


def test_bob_rank_matches_sort_oracle(small_market):
    _, _, _, split, seg = small_market
    cfg = TrainConfig(epochs=3, rng_seed=2)
    scout, reply = train_scout_model(split.train, cfg), train_reply_model(split.train, cfg)
    ctx = FeatureContext(split.train, scout, reply, seg)
    labels = build_pseudo_labels(split.train, scout, reply, AlphaPolicy.global_(0.5), seg)
    model = train_meta(labels, ctx, GbdtConfig(num_trees=20, min_samples_leaf=5))
    cand = list(range(100, 150))
    scores = [float(model.predict(featurize(ctx, (7, j)).reshape(1, -1))[0]) for j in cand]
    assert bob_rank(model, ctx, 7, cand) == sort_oracle(cand, scores)
    assert np.array_equal(BobScorer(model, ctx).score_pairs([7] * 50, cand), scores)
