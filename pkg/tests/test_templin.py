import math

import numpy as np
import pytest

from coldpac import templin as tl

WS = tl.SETTINGS["well-specified"]


@pytest.fixture(scope="module")
def task():
    return tl.setting_task(WS, 0)


def test_fourier_features():
    x = np.array([-0.7, 0.0, 0.3])
    F = tl.fourier_features(x, 4)
    assert np.allclose(F[:, 0], 1 / math.sqrt(2 * math.pi))
    assert np.allclose(F[:, 1], np.cos(2 * x) / math.sqrt(math.pi))
    assert np.allclose(F[:, 2], np.sin(3 * x) / math.sqrt(math.pi))
    assert np.allclose(F[:, 3], np.cos(4 * x) / math.sqrt(math.pi))


def test_generation_determinism_and_empty():
    a, b = tl.generate_regression_data(7, seed=3), tl.generate_regression_data(7, seed=3)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    e = tl.generate_regression_data(0)
    assert e.n == 0 and e.d == 10


def test_tempering_is_variance_rescaling(task):
    hot = tl.fit_tempered_posterior(task, tl.GaussianModelSpec(1.0, 2.0), 4.0)
    plain = tl.fit_tempered_posterior(task, tl.GaussianModelSpec(0.25, 2.0), 1.0)
    assert np.allclose(hot.mean, plain.mean, atol=1e-12)
    assert np.allclose(hot.covariance, plain.covariance, atol=1e-12)


def test_empty_data_gives_prior():
    spec = tl.GaussianModelSpec(1.0, 2.0)
    post = tl.fit_tempered_posterior(tl.generate_regression_data(0), spec, 1.0)
    assert np.allclose(post.mean, 0.0) and np.allclose(post.covariance, 2.0 * np.eye(10))


def test_covariance_spd_over_lambda(task):
    for lam in (1e-3, 0.5, 1.0, 10.0, 1e3):
        post = tl.fit_tempered_posterior(task, WS.spec(), lam)
        assert np.allclose(post.covariance, post.covariance.T, atol=1e-10)
        np.linalg.cholesky(post.covariance)


def test_gibbs_loss_point_mass():
    x = np.linspace(-1, 1, 6)
    X = tl.fourier_features(x, 3)
    w = np.ones(3)
    task = tl.RegressionTask(X=X, y=X @ w, noise_var_true=1.0, true_weights=w, rng_seed=0, x=x)
    post = tl.TemperedLinRegPosterior(w, 1e-30 * np.eye(3), 1.0)
    assert tl.empirical_gibbs_loss(post, task, tl.GaussianModelSpec(0.5, 1.0)) == pytest.approx(0.5 * math.log(2 * math.pi * 0.5))


def test_gibbs_loss_matches_mc(task):
    spec = WS.spec()
    post = tl.fit_tempered_posterior(task, spec, 1.0)
    th = post.sample(100_000, np.random.default_rng(1))
    vals = -tl.log_likelihood(th, task.X, task.y, spec) / task.n
    se = vals.std() / math.sqrt(len(vals))
    assert abs(vals.mean() - tl.empirical_gibbs_loss(post, task, spec)) < 3 * se


def test_gibbs_derivative(task):
    spec = WS.spec()
    lam, h = 1.0, 1e-3
    fd = (
        tl.empirical_gibbs_loss(tl.fit_tempered_posterior(task, spec, lam + h), task, spec)
        - tl.empirical_gibbs_loss(tl.fit_tempered_posterior(task, spec, lam - h), task, spec)
    ) / (2 * h)
    post = tl.fit_tempered_posterior(task, spec, lam)
    assert tl.gibbs_derivative(post, task, spec) == pytest.approx(fd, abs=1e-4)
    assert tl.gibbs_derivative(post, task, spec) < 0
    mc = tl.gibbs_derivative(post, task, spec, method="mc", m=200_000, seed=2)
    assert mc == pytest.approx(fd, rel=0.05)
    empty = tl.generate_regression_data(0)
    assert tl.gibbs_derivative(tl.fit_tempered_posterior(empty, spec, 1.0), empty, spec) == 0.0


def test_bayes_loss_point_mass(task):
    spec = WS.spec()
    ev = tl.setting_task(WS, 99, 500)
    w = np.ones(10)
    post = tl.TemperedLinRegPosterior(w, 1e-300 * np.eye(10), 1.0)
    r = ev.y - ev.X @ w
    plug_in = np.mean(0.5 * math.log(2 * math.pi) + 0.5 * r**2)
    assert tl.bayes_loss(post, spec, ev) == pytest.approx(plug_in, abs=1e-12)


def test_bayes_derivative_sign_matches_finite_difference():
    for name in ("well-specified", "lik-misspec-1", "lik-misspec-2", "prior-misspec"):
        s = tl.SETTINGS[name]
        task = tl.setting_task(s, 0)
        ev = tl.setting_task(s, 1_000_003, 10_000)
        spec = s.spec()
        h = 1e-3
        fd = (
            tl.bayes_loss(tl.fit_tempered_posterior(task, spec, 1 + h), spec, ev)
            - tl.bayes_loss(tl.fit_tempered_posterior(task, spec, 1 - h), spec, ev)
        ) / (2 * h)
        bd = tl.bayes_derivative(1.0, task, spec, ev, m=10_000, seed=17)
        assert np.sign(bd.estimate) == np.sign(fd), name
        # the per-datum estimate times n is the unscaled derivative
        assert abs(bd.dB_dlam - fd) < 4 * bd.dB_dlam_stderr + 0.01, name


def test_bayes_derivative_preconditions(task):
    with pytest.raises(ValueError):
        tl.bayes_derivative(1.0, task, WS.spec(), task, m=10)


def test_prop23_consequence():
    # wherever the Bayes loss has a cold effect, training loss at lam=1 sits above the MLE loss
    for name in ("lik-misspec-2", "prior-misspec"):
        s = tl.SETTINGS[name]
        task = tl.setting_task(s, 0)
        bd = tl.cpe_at_one(s, 0, m=2000, eval_size=5000)
        if bd.estimate < -3 * bd.stderr:
            post = tl.fit_tempered_posterior(task, s.spec(), 1.0)
            assert tl.empirical_gibbs_loss(post, task, s.spec()) > tl.mle_loss(task, s.spec())


def test_bayes_loss_examples():
    ws_task = tl.setting_task(WS, 0)
    ev = tl.setting_task(WS, 1_000_003, 10_000)
    grid = np.linspace(0.25, 8, 32)
    losses = [tl.bayes_loss(tl.fit_tempered_posterior(ws_task, WS.spec(), lam), WS.spec(), ev) for lam in grid]
    at1 = tl.bayes_loss(tl.fit_tempered_posterior(ws_task, WS.spec(), 1.0), WS.spec(), ev)
    assert at1 - min(losses) < 0.02
    pm = tl.SETTINGS["prior-misspec"]
    t = tl.setting_task(pm, 0)
    e = tl.setting_task(pm, 1_000_003, 10_000)
    b = lambda lam: tl.bayes_loss(tl.fit_tempered_posterior(t, pm.spec(), lam), pm.spec(), e)
    assert b(2.0) < b(1.0)


# --- data augmentation -----------------------------------------------------


def test_da_identity_equals_plain(task):
    spec = WS.spec()
    ident = tl.TransformationSet.identity(10)
    th = np.random.default_rng(0).normal(size=(5, 10))
    assert np.allclose(tl.da_pseudo_loss(th, task, spec, ident), -tl.log_likelihood(th, task.X, task.y, spec) / task.n)
    a = tl.fit_da_tempered_posterior(task, spec, ident, 1.3)
    b = tl.fit_tempered_posterior(task, spec, 1.3)
    assert np.allclose(a.mean, b.mean) and np.allclose(a.covariance, b.covariance)


def test_da_transform_invariances(task):
    spec = WS.spec()
    ones = np.ones((1, 10))
    perm = tl.TransformationSet.cyclic_permutations(10)
    flips = tl.TransformationSet.sign_flips(10)
    plain = -tl.log_likelihood(ones, task.X, task.y, spec) / task.n
    assert np.allclose(tl.da_pseudo_loss(ones, task, spec, perm), plain)
    assert not np.allclose(tl.da_pseudo_loss(ones, task, spec, flips), plain)


def test_da_posterior_symmetry(task):
    post = tl.fit_da_tempered_posterior(task, WS.spec(), tl.TransformationSet.cyclic_permutations(10), 1.0)
    assert np.ptp(post.mean) < 1e-10


def test_da_lambda_zero_limit_is_prior(task):
    post = tl.fit_da_tempered_posterior(task, WS.spec(), tl.TransformationSet.sign_flips(10), 1e-12)
    assert np.allclose(post.covariance, 2.0 * np.eye(10), atol=1e-9)


def test_da_cov_diagnostics(task):
    spec = WS.spec()
    ho = tl.setting_task(WS, 5_000_011, 10_000)
    post = tl.fit_tempered_posterior(task, spec, 1.0)
    r = tl.da_cov_diagnostics(post, task, spec, ho, m=10_000, seed=3)
    assert abs(r.neg_s_mean - 1.0) < 3 * r.neg_s_stderr
    h = 1e-4
    fd = (
        tl.population_gibbs_loss(tl.fit_tempered_posterior(task, spec, 1 + h), ho, spec)
        - tl.population_gibbs_loss(tl.fit_tempered_posterior(task, spec, 1 - h), ho, spec)
    ) / (2 * h)
    assert abs(r.gibbs_grad_cov - fd) < 3 * r.gibbs_grad_stderr


def test_da_cov_degenerate_warns():
    spec = WS.spec()
    empty = tl.generate_regression_data(0)
    ho = tl.setting_task(WS, 1, 10_000)
    post = tl.fit_tempered_posterior(empty, spec, 1.0)
    with pytest.warns(RuntimeWarning):
        r = tl.da_cov_diagnostics(post, empty, spec, ho, m=1000)
    assert r.degenerate and r.gibbs_grad_cov == 0.0


def test_scan_rows():
    rows = tl.cpe_scan(WS, [0.5, 1.0], seed=0, eval_size=2000, m=1000)
    assert [r.lam for r in rows] == [0.5, 1.0]
    assert rows[0].gibbs_emp >= rows[1].gibbs_emp
