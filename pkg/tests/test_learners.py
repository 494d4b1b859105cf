from dataclasses import replace

import numpy as np
import pytest

from conftest import make_dataset
from oracles import auc_pairs, auc_rank_sum, sigmoid
from reciprec.learners import (
    MfModel,
    TrainConfig,
    load_mf,
    score_pairs,
    train_dmp_model,
    train_reply_model,
    train_scout_model,
)

SEEDS = range(5)


def scout_toy():
    rows = [(0, 0, 1, 0), (0, 1, 0, 0)] * 20
    return make_dataset(rows, 2, 2)


def reply_toy():
    rows = [(0, 0, 1, 1), (0, 1, 1, 0)] * 20
    return make_dataset(rows, 2, 2)


def match_toy():
    rows = [(0, 0, 1, 1), (0, 1, 0, 0)] * 20
    return make_dataset(rows, 2, 2)


def test_rank_sum_auc_matches_pair_count():
    rng = np.random.default_rng(0)
    s = rng.integers(0, 5, size=60).astype(float)
    y = rng.random(60) < 0.4
    assert auc_rank_sum(s, y) == pytest.approx(auc_pairs(s, y), abs=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_separable_toys(seed):
    cfg = TrainConfig(rng_seed=seed)
    scout = train_scout_model(scout_toy(), cfg)
    assert scout.score(0, 0) > scout.score(0, 1)
    reply = train_reply_model(reply_toy(), cfg)
    assert reply.score(0, 0) > reply.score(0, 1)
    dmp = train_dmp_model(match_toy(), cfg)
    assert dmp.score(0, 0) > dmp.score(0, 1)


@pytest.mark.parametrize("toy,train", [(scout_toy, train_scout_model), (reply_toy, train_reply_model),
                                       (match_toy, train_dmp_model)])
def test_toy_loss_non_increasing(toy, train):
    model = train(toy(), TrainConfig(learning_rate=0.01, epochs=30, rng_seed=2))
    hist = np.array(model.loss_history)
    assert len(hist) == 31
    assert np.all(np.diff(hist) <= 1e-6)


def test_zero_epochs_is_initialization():
    cfg = TrainConfig(epochs=0, rng_seed=4)
    m = train_scout_model(scout_toy(), cfg)
    lim = 0.5 / np.sqrt(cfg.latent_dim)
    assert np.all(np.abs(m.company_factors) <= lim)
    assert not m.company_bias.any() and not m.seeker_bias.any() and m.global_bias == 0.0
    for c in range(2):
        for j in range(2):
            z = float(m.company_factors[c] @ m.seeker_factors[j])
            assert m.score(c, j) == pytest.approx(sigmoid(z), rel=1e-12)
            assert 0 < m.score(c, j) < 1


def test_degenerate_labels():
    cfg = TrainConfig()
    no_scouts = make_dataset([(0, 0, 0, 0), (0, 1, 0, 0)], 2, 2)
    with pytest.raises(ValueError, match="degenerate labels"):
        train_scout_model(no_scouts, cfg)
    with pytest.raises(ValueError, match="no reply observations"):
        train_reply_model(no_scouts, cfg)
    no_replies = make_dataset([(0, 0, 1, 0), (0, 1, 1, 0)], 2, 2)
    with pytest.raises(ValueError, match="degenerate labels"):
        train_reply_model(no_replies, cfg)
    with pytest.raises(ValueError, match="degenerate labels"):
        train_dmp_model(no_replies, cfg)


def test_reply_model_ignores_unscouted_events():
    base = [(0, 0, 1, 1), (0, 1, 1, 0), (1, 1, 1, 1), (1, 0, 1, 0)] * 5
    extra = base + [(c, j, 0, 0) for c in range(2) for j in range(2)] * 3
    cfg = TrainConfig(rng_seed=9)
    a = train_reply_model(make_dataset(base, 2, 2), cfg)
    b = train_reply_model(make_dataset(extra, 2, 2), cfg)
    assert np.array_equal(a.company_factors, b.company_factors)
    assert np.array_equal(a.seeker_bias, b.seeker_bias)


def test_deterministic_parameters(small_market):
    _, _, _, split, _ = small_market
    cfg = TrainConfig(rng_seed=3, epochs=5)
    a, b = train_dmp_model(split.train, cfg), train_dmp_model(split.train, cfg)
    for f in ("company_factors", "seeker_factors", "company_bias", "seeker_bias"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert a.global_bias == b.global_bias
    c = train_dmp_model(split.train, replace(cfg, rng_seed=4))
    assert not np.array_equal(a.company_factors, c.company_factors)


def test_default_scout_train_auc(default_market, default_models):
    _, _, _, split = default_market
    scout, _ = default_models
    scores = scout.score_pairs(split.train.companies, split.train.seekers)
    assert auc_rank_sum(scores, split.train.scouts) > 0.75


def test_default_reply_test_auc(default_market, default_models):
    _, _, _, split = default_market
    _, reply = default_models
    test = split.test
    scouted = test.scouts == 1
    scores = reply.score_pairs(test.companies[scouted], test.seekers[scouted])
    assert auc_rank_sum(scores, test.replies[scouted]) > 0.65


def test_default_dmp_auc_above_chance(default_market):
    _, _, _, split = default_market
    dmp = train_dmp_model(split.train, TrainConfig(rng_seed=0))
    scores = dmp.score_pairs(split.test.companies, split.test.seekers)
    assert auc_rank_sum(scores, split.test.matches) > 0.5


def test_scores_in_open_interval(default_models):
    scout, reply = default_models
    c, s = np.meshgrid(np.arange(300), np.arange(0, 2000, 7), indexing="ij")
    for m in (scout, reply):
        p = m.score_pairs(c.ravel(), s.ravel())
        assert np.all(np.isfinite(p)) and np.all((p > 0) & (p < 1))


def test_score_pairs_batch(default_models):
    scout, _ = default_models
    assert score_pairs(scout, []) == []
    assert score_pairs(scout, [(3, 4)]) == [scout.score(3, 4)]
    rng = np.random.default_rng(1)
    pairs = list(zip(rng.integers(0, 300, 100).tolist(), rng.integers(0, 2000, 100).tolist()))
    assert score_pairs(scout, pairs) == [scout.score(c, j) for c, j in pairs]
    for bad in ([(300, 0)], [(0, 2000)], [(-1, 0)]):
        with pytest.raises(ValueError, match="unknown entity"):
            score_pairs(scout, bad)


def test_save_load_bitwise(tmp_path, default_models):
    scout, _ = default_models
    scout.save(tmp_path / "s.mf")
    back = load_mf(tmp_path / "s.mf")
    assert isinstance(back, MfModel)
    c, s = np.meshgrid(np.arange(300), np.arange(0, 2000, 13), indexing="ij")
    assert np.array_equal(back.score_pairs(c.ravel(), s.ravel()), scout.score_pairs(c.ravel(), s.ravel()))
    assert (tmp_path / "s.mf").read_text().splitlines()[0] == "reciprec-mf 1"


def test_load_rejects_other_formats(tmp_path):
    p = tmp_path / "x.mf"
    p.write_text("something else\n")
    with pytest.raises(ValueError):
        load_mf(p)
