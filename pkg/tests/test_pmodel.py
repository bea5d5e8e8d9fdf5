import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldpac import pmodel as pm
from coldpac.conc import DiscreteSupport
from coldpac.data import make_blobs

LIN = pm.ClassifierArch.linear(3, 4)
MLP = pm.ClassifierArch.one_hidden(3, 5, 4)


def test_arch_validation():
    assert LIN.param_count == 3 * 4 + 4
    assert MLP.param_count == 3 * 5 + 5 + 5 * 4 + 4
    with pytest.raises(ValueError):
        pm.ClassifierArch.linear(2, 1)


def test_init_posterior():
    d = pm.init_posterior(MLP, 0.03, 4)
    assert np.allclose(d.stds, 0.03)
    e = pm.init_posterior(MLP, 0.03, 4)
    assert np.array_equal(d.means, e.means)
    W1, _ = pm.unpack(MLP, d.means)[0]
    assert np.all(np.abs(W1) <= 1 / math.sqrt(3))
    empty = pm.init_posterior(pm.ClassifierArch.linear(0, 2), 0.1, 0)
    assert np.all(empty.means == 0)


def test_sampling():
    d = pm.MeanFieldGaussian(np.array([1.0, -2.0]), np.full(2, -50.0))
    w, _ = pm.sample_weights(d, np.random.default_rng(0))
    assert np.allclose(w, d.means)
    d = pm.MeanFieldGaussian(np.array([1.0, -2.0]), np.log([0.5, 2.0]))
    W, _ = pm.sample_weights(d, np.random.default_rng(1), size=100_000)
    assert np.all(np.abs(W.mean(0) - d.means) < 4 * d.stds / math.sqrt(100_000))
    a, _ = pm.sample_weights(d, np.random.default_rng(9))
    b, _ = pm.sample_weights(d, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_forward_basics():
    X = np.random.default_rng(0).normal(size=(6, 3))
    assert np.all(pm.forward(LIN, np.zeros(LIN.param_count), X) == 0)
    w = pm.init_posterior(LIN, 0.1, 0).means
    b = pm.forward(LIN, w, np.zeros((1, 3)))
    lhs = pm.forward(LIN, w, X[:1] + X[1:2]) - b
    rhs = (pm.forward(LIN, w, X[:1]) - b) + (pm.forward(LIN, w, X[1:2]) - b)
    assert np.allclose(lhs, rhs)
    W = np.stack([w] * 6)
    assert np.allclose(pm.forward_many(LIN, W, X), pm.forward(LIN, w, X))


@pytest.mark.parametrize("arch", [LIN, MLP])
def test_backward_finite_difference(arch):
    rng = np.random.default_rng(2)
    for _ in range(10):
        X = rng.normal(size=(5, 3))
        w = rng.normal(size=arch.param_count)
        G = rng.normal(size=(5, 4))
        g = pm.backward(arch, w, X, G)
        h = 1e-6
        fd = np.array([
            (np.sum(G * pm.forward(arch, w + h * e, X)) - np.sum(G * pm.forward(arch, w - h * e, X))) / (2 * h)
            for e in np.eye(arch.param_count)
        ])
        assert np.max(np.abs(fd - g) / (np.abs(fd) + np.abs(g) + 1e-8)) < 1e-4


def test_bounded_ce_examples():
    cfg = pm.SurrogateConfig()
    assert pm.bounded_cross_entropy(np.array([100.0, 0.0]), 0, cfg) == 0.0
    assert pm.bounded_cross_entropy(np.array([0.0, 100.0]), 0, cfg) == 1.0
    # softmax(c2 u)_Y = 0.1 with c2 = 5
    u = np.array([math.log(1 / 9) / 5, 0.0])
    assert pm.bounded_cross_entropy(u, 0, cfg) == pytest.approx(0.2, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=5), st.integers(0, 4))
def test_bounded_ce_range(scores, y):
    y = y % len(scores)
    v = pm.bounded_cross_entropy(np.array(scores), y)
    assert 0.0 <= v <= 1.0


def test_smooth_indicator():
    assert pm.smooth_indicator(0.3, 0.3, 5.0) == 0.5
    assert pm.smooth_indicator(2.0, 0.0, 5.0) == pytest.approx(1 / (1 + math.exp(-10)), abs=1e-12)
    z = np.linspace(-3, 3, 50)
    assert np.all(np.diff(pm.smooth_indicator(z, 0.0, 5.0)) > 0)


def test_gaussian_kl():
    d = pm.init_posterior(LIN, 0.2, 0)
    assert pm.gaussian_kl(d, d) == 0.0
    q = pm.MeanFieldGaussian(np.array([1.0]), np.zeros(1))
    p = pm.MeanFieldGaussian(np.array([0.0]), np.zeros(1))
    assert pm.gaussian_kl(q, p) == pytest.approx(0.5)
    rng = np.random.default_rng(5)
    for _ in range(1000):
        a = pm.MeanFieldGaussian(rng.normal(size=4), rng.normal(size=4))
        b = pm.MeanFieldGaussian(rng.normal(size=4), rng.normal(size=4))
        assert pm.gaussian_kl(a, b) >= 0
    ab = pm.MeanFieldGaussian(np.r_[a.means, b.means], np.r_[a.log_stds, b.log_stds])
    ba = pm.MeanFieldGaussian(np.r_[b.means, a.means], np.r_[b.log_stds, a.log_stds])
    assert pm.gaussian_kl(ab, ba) == pytest.approx(pm.gaussian_kl(a, b) + pm.gaussian_kl(b, a))


def _objectives(prior):
    sup = DiscreteSupport((-0.5, 0.0, 0.5, 1.0))
    return [pm.McAllesterObjective(prior, 200, 0.025, 2), pm.ExcessObjective(prior, sup, 0.5, 200, 0.025, 2)]


@pytest.mark.parametrize("arch", [LIN, MLP])
def test_objective_gradient_finite_difference(arch):
    rng = np.random.default_rng(3)
    cfg = pm.SurrogateConfig(c2=1.0)
    prior = pm.init_posterior(arch, 0.1, 1)
    X, y, aux = rng.normal(size=(8, 3)), rng.integers(0, 4, 8), rng.uniform(0, 1, 8)
    for obj in _objectives(prior):
        for _ in range(5):
            q = pm.MeanFieldGaussian(prior.means + 0.3 * rng.normal(size=prior.dim), prior.log_stds + 0.2 * rng.normal(size=prior.dim))
            eps = rng.normal(size=prior.dim)
            _, gm, gs, _ = pm.objective_value_and_grad(q, arch, X, y, aux, obj, cfg, eps)

            def f(means, log_stds):
                return pm.objective_value_and_grad(pm.MeanFieldGaussian(means, log_stds), arch, X, y, aux, obj, cfg, eps)[0]

            h = 1e-6
            for i in range(prior.dim):
                e = np.zeros(prior.dim)
                e[i] = h
                fd_m = (f(q.means + e, q.log_stds) - f(q.means - e, q.log_stds)) / (2 * h)
                fd_s = (f(q.means, q.log_stds + e) - f(q.means, q.log_stds - e)) / (2 * h)
                assert abs(fd_m - gm[i]) <= 1e-3 * (abs(fd_m) + abs(gm[i])) + 1e-9
                assert abs(fd_s - gs[i]) <= 1e-3 * (abs(fd_s) + abs(gs[i])) + 1e-9


def test_mean_gradient_of_linear_functional():
    # E_q[sum of scores at x = e_1] has gradient 1 in each weight of row 1, free of the noise
    arch = pm.ClassifierArch.linear(2, 2)
    q = pm.init_posterior(arch, 0.5, 0)
    X = np.array([[1.0, 0.0]])
    g = pm.backward(arch, q.means, X, np.ones((1, 2)))
    assert np.allclose(g, [1, 1, 0, 0, 1, 1])


def test_step_zero_lr_and_rejection():
    arch = pm.ClassifierArch.linear(2, 2)
    q = pm.init_posterior(arch, 0.1, 0)
    obj = pm.McAllesterObjective(q, 100, 0.05)
    X, y = np.ones((4, 2)), np.array([0, 1, 0, 1])
    st_ = pm.OptimizerState.zeros(q.dim)
    new, st_, _ = pm.objective_grad_step(q, arch, (X, y, np.zeros(4)), obj, st_, pm.TrainHyper(lr=0.0), np.random.default_rng(0))
    assert np.array_equal(new.means, q.means) and np.array_equal(new.log_stds, q.log_stds)
    bad = (np.full((4, 2), np.nan), y, np.zeros(4))
    new, st_, _ = pm.objective_grad_step(q, arch, bad, obj, st_, pm.TrainHyper(), np.random.default_rng(0))
    assert st_.rejected == 1 and np.array_equal(new.means, q.means)


def test_default_hyper():
    h = pm.TrainHyper()
    assert (h.batch_size, h.lr, h.momentum) == (250, 0.001, 0.95)


def test_trainer_determinism_and_tied_stds():
    ds = make_blobs(600, 2, 2, 3.0, seed=0)
    arch = pm.ClassifierArch.linear(2, 2)
    q0 = pm.init_posterior(arch, 0.1, 0)
    obj = pm.McAllesterObjective(q0, 600, 0.05)
    h = pm.TrainHyper(epochs=3, lr=0.01)
    a, _ = pm.train(q0.copy(), arch, ds.features, ds.labels, obj, h, 5)
    b, _ = pm.train(q0.copy(), arch, ds.features, ds.labels, obj, h, 5)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.log_stds, b.log_stds)
    t, _ = pm.train(q0.copy(), arch, ds.features, ds.labels, obj, pm.TrainHyper(epochs=3, lr=0.01, tie_stds=True), 5)
    assert np.ptp(t.log_stds) == 0.0


def test_separable_blobs_learnable():
    from coldpac.rpb import gibbs_01

    arch = pm.ClassifierArch.linear(2, 2)
    ds = make_blobs(4000, 2, 2, 4.0, seed=0)
    ho = make_blobs(20000, 2, 2, 4.0, seed=1)
    q0 = pm.init_posterior(arch, 1.0, 0)
    q, _ = pm.train(q0.copy(), arch, ds.features, ds.labels, pm.McAllesterObjective(q0, 4000, 0.025), pm.TrainHyper(lr=0.01), 0)
    assert gibbs_01(q, arch, ho, 0) <= 0.05


def test_serialization_round_trip():
    q = pm.init_posterior(MLP, 0.03, 11)
    q.means[0] = 0.1 + 0.2  # a value without a short decimal form
    text = pm.dumps(q, MLP, 11)
    r, arch, seed = pm.loads(text)
    assert arch == MLP and seed == 11
    assert r.means.tobytes() == q.means.tobytes() and r.log_stds.tobytes() == q.log_stds.tobytes()
    obj = json.loads(text)
    obj["means"] = obj["means"][:-1]
    obj["log_stds"] = obj["log_stds"][:-1]
    with pytest.raises(ValueError):
        pm.dist_from_json(obj)
