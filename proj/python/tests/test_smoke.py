import numpy as np
import pytest

import unmix_tns as ut


def rand_batch(seed, shape=(6, 3, 5)):
    return np.random.default_rng(seed).normal(1.0, 2.0, size=shape)


def test_instance_stats_match_numpy():
    x = rand_batch(0)
    mean, var = ut.instance_stats(x)
    np.testing.assert_allclose(mean, x.mean(axis=2), atol=1e-12)
    np.testing.assert_allclose(var, x.var(axis=2), atol=1e-12)
    bmean, bvar = ut.batch_stats(x)
    np.testing.assert_allclose(bmean, x.mean(axis=(0, 2)), atol=1e-12)
    np.testing.assert_allclose(bvar, x.var(axis=(0, 2)), atol=1e-12)


def test_mixture_moments_total_variance():
    means = np.array([[0.0], [2.0]])
    vars_ = np.array([[1.0], [1.0]])
    mean, var = ut.mixture_moments(means, vars_)
    assert mean[0] == pytest.approx(1.0)
    assert var[0] == pytest.approx(2.0)
    mean, var = ut.mixture_moments(means, vars_, np.array([0.75, 0.25]))
    assert mean[0] == pytest.approx(0.5)
    assert var[0] == pytest.approx(1.75)


def test_softmax_and_cosine():
    p = ut.assignment_probs(np.array([[1.0, 0.0]]), 0.07)
    assert p.sum() == pytest.approx(1.0)
    assert p[0, 0] == pytest.approx(1.0 / (1.0 + np.exp(-1.0 / 0.07)), rel=1e-12)
    assert ut.cosine_sim(np.array([1.0, 0.0]), np.array([0.0, 0.0])) == 0.0
    assert ut.momentum_lambda(64) == 0.1
    with pytest.raises(ValueError):
        ut.assignment_probs(np.array([[1.0]]), 0.0)


def test_single_component_is_instance_norm():
    x = rand_batch(1)
    src = ut.SourceStats(np.zeros(3), np.ones(3))
    state = ut.init_unmix(src, components=1, alpha=0.0)
    out, _ = ut.unmix_forward(state, x, src.gamma, src.beta)
    expect = (x - x.mean(axis=2, keepdims=True)) / np.sqrt(x.var(axis=2, keepdims=True) + 1e-6)
    np.testing.assert_allclose(out, expect, atol=1e-9)


def test_forward_is_functional_and_frozen_at_zero_momentum():
    x = rand_batch(2)
    src = ut.SourceStats(np.full(3, 0.5), np.full(3, 2.0))
    state = ut.init_unmix(src, components=4, seed=3)
    before = state.comp_mean.copy()
    _, advanced = ut.unmix_forward(state, x, src.gamma, src.beta)
    np.testing.assert_array_equal(state.comp_mean, before)
    assert not np.array_equal(advanced.comp_mean, before)
    frozen = ut.init_unmix(src, components=4, lam=0.0, seed=3)
    _, same = ut.unmix_forward(frozen, x, src.gamma, src.beta)
    assert same == frozen


def test_baselines():
    x = rand_batch(4)
    src = ut.SourceStats(np.zeros(3), np.ones(3))
    np.testing.assert_allclose(ut.alpha_bn_forward(x, src, 0.0), ut.source_bn_forward(x, src), atol=1e-12)
    np.testing.assert_allclose(
        ut.alpha_bn_forward(x, src, 1.0), ut.tbn_forward(x, src.gamma, src.beta), atol=1e-12
    )


def test_dirichlet_order_is_permutation():
    labels = np.repeat(np.arange(4), 50).tolist()
    order = ut.dirichlet_order(labels, 0.1, 16, 7)
    assert sorted(order) == list(range(len(labels)))
    assert order == ut.dirichlet_order(labels, 0.1, 16, 7)


def test_end_to_end_run(tmp_path):
    ckpt = ut.train_source(per_class=300, epochs=10)
    path = tmp_path / "model.txt"
    ckpt.save(str(path))
    assert ut.load_checkpoint(str(path)) == ckpt
    a = ut.run_experiment(ckpt, norm="unmix", test_per_class=200)
    b = ut.run_experiment(ckpt, norm="unmix", test_per_class=200)
    tbn = ut.run_experiment(ckpt, norm="tbn", test_per_class=200)
    assert a["trace"] == b["trace"]
    assert a["final_error"] < tbn["final_error"]
    assert len(a["batch_error"]) == len(a["cumulative_error"]) == 1000 // 64 + 1
    with pytest.raises(ValueError):
        ut.run_experiment(ckpt, norm="bogus")
