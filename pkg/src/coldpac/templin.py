"""Exact tempered Bayesian linear regression on Fourier features.

Everything here is conjugate: a Gaussian prior and a Gaussian likelihood raised
to the power ``lam`` give a Gaussian posterior, so the training (Gibbs) loss, its
derivative in ``lam`` and the Bayes loss have closed forms.  Monte Carlo is only
used for quantities involving the data-generating distribution through density
ratios (the Bayes-loss derivative and the S-score covariances).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

LOG_2PI = math.log(2.0 * math.pi)


def fourier_features(x, K: int) -> np.ndarray:
    """``[g_1(x), ..., g_K(x)]`` with ``g_1 = 1/sqrt(2 pi)``, odd k sine, even k cosine."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (K,))
    out[..., 0] = 1.0 / math.sqrt(2.0 * math.pi)
    for k in range(2, K + 1):
        fn = np.cos if k % 2 == 0 else np.sin
        out[..., k - 1] = fn(k * x) / math.sqrt(math.pi)
    return out


@dataclass
class RegressionTask:
    X: np.ndarray
    y: np.ndarray
    noise_var_true: float
    true_weights: np.ndarray
    rng_seed: int
    x: np.ndarray | None = None

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] < 1:
            raise ValueError("X must be an n x d matrix with d >= 1")
        if self.noise_var_true <= 0:
            raise ValueError("noise_var_true must be positive")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GaussianModelSpec:
    likelihood_var: float
    prior_var: float
    prior_mean: np.ndarray | None = None

    def __post_init__(self):
        if self.likelihood_var <= 0 or self.prior_var <= 0:
            raise ValueError("variances must be strictly positive")

    def mean0(self, d: int) -> np.ndarray:
        return np.zeros(d) if self.prior_mean is None else np.asarray(self.prior_mean, float)


@dataclass
class TemperedLinRegPosterior:
    mean: np.ndarray
    covariance: np.ndarray
    lam: float
    _chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.covariance = 0.5 * (self.covariance + self.covariance.T)
        self._chol = np.linalg.cholesky(self.covariance)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((m, len(self.mean)))
        return self.mean + z @ self._chol.T

    def predictive(self, X: np.ndarray, spec: GaussianModelSpec):
        """Mean and variance of the posterior predictive ``N(m^T x, s2 + x^T S x)``."""
        mu = X @ self.mean
        var = spec.likelihood_var + np.einsum("ij,jk,ik->i", X, self.covariance, X)
        return mu, var


@dataclass(frozen=True)
class CPESetting:
    name: str
    likelihood_var: float
    prior_var: float
    K: int = 10
    n: int = 5
    true_order: int = 10

    def spec(self) -> GaussianModelSpec:
        return GaussianModelSpec(likelihood_var=self.likelihood_var, prior_var=self.prior_var)


# The four synthetic configurations plus the 50-point variant of case II.
SETTINGS = {
    "well-specified": CPESetting("well-specified", 1.0, 2.0),
    "lik-misspec-1": CPESetting("lik-misspec-1", 0.15, 2.0, K=20),
    "lik-misspec-2": CPESetting("lik-misspec-2", 3.0, 2.0),
    "prior-misspec": CPESetting("prior-misspec", 1.0, 0.5),
    "lik-misspec-2-n50": CPESetting("lik-misspec-2-n50", 3.0, 2.0, n=50),
}


def generate_regression_data(
    n: int, K: int = 10, seed: int = 0, true_order: int | None = None, noise_var_true: float = 1.0
) -> RegressionTask:
    """x ~ U[-1, 1], features of order K, y ~ N(1^T phi_{true_order}(x), noise_var_true)."""
    if K < 1 or n < 0:
        raise ValueError("need n >= 0 and K >= 1")
    true_order = K if true_order is None else true_order
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=n)
    X = fourier_features(x, K)
    f = fourier_features(x, true_order).sum(axis=-1)
    y = f + math.sqrt(noise_var_true) * rng.standard_normal(n)
    w = np.zeros(K)
    w[: min(K, true_order)] = 1.0
    return RegressionTask(X=X, y=y, noise_var_true=noise_var_true, true_weights=w, rng_seed=seed, x=x)


def setting_task(setting: CPESetting, seed: int, n: int | None = None) -> RegressionTask:
    return generate_regression_data(
        setting.n if n is None else n, K=setting.K, seed=seed, true_order=setting.true_order
    )


def _fit_quadratic(gram: np.ndarray, xty: np.ndarray, spec: GaussianModelSpec, lam: float) -> TemperedLinRegPosterior:
    d = gram.shape[0]
    scale = lam / spec.likelihood_var
    precision = scale * gram + np.eye(d) / spec.prior_var
    rhs = scale * xty + spec.mean0(d) / spec.prior_var
    factor = cho_factor(precision, lower=True)
    mean = cho_solve(factor, rhs)
    cov = cho_solve(factor, np.eye(d))
    return TemperedLinRegPosterior(mean=mean, covariance=cov, lam=lam)


def fit_tempered_posterior(task: RegressionTask, spec: GaussianModelSpec, lam: float) -> TemperedLinRegPosterior:
    """Posterior proportional to ``likelihood^lam * prior``: noise variance becomes ``s2/lam``."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    return _fit_quadratic(task.X.T @ task.X, task.X.T @ task.y, spec, lam)


def _sum_sq_residual_moments(post, X, y):
    """E and Var of ``||y - X theta||^2`` under the Gaussian posterior."""
    r = y - X @ post.mean
    A = X.T @ X
    AS = A @ post.covariance
    mean = r @ r + np.trace(AS)
    Xr = X.T @ r
    var = 4.0 * Xr @ post.covariance @ Xr + 2.0 * np.sum(AS * AS.T)
    return mean, var


def empirical_gibbs_loss(post: TemperedLinRegPosterior, task: RegressionTask, spec: GaussianModelSpec) -> float:
    """``E_post[-(1/n) ln p(D | theta)]``."""
    if task.n < 1:
        raise ValueError("empirical Gibbs loss needs at least one data point")
    s2 = spec.likelihood_var
    m, _ = _sum_sq_residual_moments(post, task.X, task.y)
    return 0.5 * (LOG_2PI + math.log(s2)) + m / (2.0 * s2 * task.n)


def loglik_variance(post: TemperedLinRegPosterior, task: RegressionTask, spec: GaussianModelSpec) -> float:
    """``Var_post(ln p(D | theta))`` in closed form."""
    if task.n == 0:
        return 0.0
    _, v = _sum_sq_residual_moments(post, task.X, task.y)
    return v / (4.0 * spec.likelihood_var**2)


def gibbs_derivative(
    post: TemperedLinRegPosterior,
    task: RegressionTask,
    spec: GaussianModelSpec,
    method: str = "closed",
    m: int = 10_000,
    seed: int = 0,
) -> float:
    """Derivative in ``lam`` of :func:`empirical_gibbs_loss`: ``-Var(ln p(D|theta)) / n``.

    ``method="mc"`` estimates the variance from ``m`` posterior draws instead.
    """
    if task.n == 0:
        return 0.0
    if method == "closed":
        var = loglik_variance(post, task, spec)
    elif method == "mc":
        theta = post.sample(m, np.random.default_rng(seed))
        var = float(np.var(log_likelihood(theta, task.X, task.y, spec), ddof=1))
    else:
        raise ValueError(f"unknown method {method!r}")
    return -var / task.n


def log_likelihood(theta: np.ndarray, X: np.ndarray, y: np.ndarray, spec: GaussianModelSpec) -> np.ndarray:
    """``ln p(D | theta)`` for each row of ``theta``."""
    s2 = spec.likelihood_var
    resid = y[None, :] - theta @ X.T
    return -0.5 * len(y) * (LOG_2PI + math.log(s2)) - 0.5 * np.sum(resid**2, axis=1) / s2


def mle_loss(task: RegressionTask, spec: GaussianModelSpec) -> float:
    """``min_theta -(1/n) ln p(D | theta)``."""
    theta, *_ = np.linalg.lstsq(task.X, task.y, rcond=None)
    r = task.y - task.X @ theta
    return 0.5 * (LOG_2PI + math.log(spec.likelihood_var)) + (r @ r) / (2.0 * spec.likelihood_var * task.n)


def bayes_loss(post: TemperedLinRegPosterior, spec: GaussianModelSpec, eval_set: RegressionTask) -> float:
    """Average negative log posterior-predictive density over ``eval_set``."""
    if eval_set.n == 0:
        raise ValueError("eval_set must be non-empty")
    mu, var = post.predictive(eval_set.X, spec)
    nll = 0.5 * (LOG_2PI + np.log(var)) + (eval_set.y - mu) ** 2 / (2.0 * var)
    return float(np.mean(nll))


def _density_chunks(theta, X, y, spec, chunk):
    """Yield (row slice, p(y_j | x_j, theta_i)) blocks of the sample x eval-point matrix."""
    s2 = spec.likelihood_var
    norm = 1.0 / math.sqrt(2.0 * math.pi * s2)
    for a in range(0, len(theta), chunk):
        resid = y[None, :] - theta[a : a + chunk] @ X.T
        yield slice(a, a + chunk), norm * np.exp(-0.5 * resid**2 / s2)


@dataclass(frozen=True)
class BayesDerivative:
    """``estimate`` is ``G(pbar) - G(p)`` with the per-datum Gibbs loss ``G``.

    That equals ``dB/dlam`` divided by the training-set size ``n``; the
    unscaled derivative is kept in ``dB_dlam``.
    """

    estimate: float
    stderr: float
    ess_mean: float
    ess_min: float
    degenerate: bool
    n: int = 1

    @property
    def dB_dlam(self) -> float:
        return self.estimate * self.n

    @property
    def dB_dlam_stderr(self) -> float:
        return self.stderr * self.n


def bayes_derivative(
    lam: float,
    task: RegressionTask,
    spec: GaussianModelSpec,
    eval_set: RegressionTask,
    m: int = 10_000,
    seed: int = 0,
    chunk: int = 500,
) -> BayesDerivative:
    """Estimate ``G(pbar, D) - G(p, D)`` where ``G`` is the empirical Gibbs loss.

    ``pbar`` is the posterior updated with one fresh point and averaged over the
    fresh points in ``eval_set``; the update is applied by self-normalised
    importance weights over a shared set of ``m`` posterior draws.
    """
    if m < 1000:
        raise ValueError("m must be >= 1000")
    post = fit_tempered_posterior(task, spec, lam)
    theta = post.sample(m, np.random.default_rng(seed))
    nll_train = -log_likelihood(theta, task.X, task.y, spec) / task.n

    col_sum = np.zeros(eval_set.n)
    col_sq = np.zeros(eval_set.n)
    for _, P in _density_chunks(theta, eval_set.X, eval_set.y, spec, chunk):
        col_sum += P.sum(axis=0)
        col_sq += (P * P).sum(axis=0)
    col_mean = col_sum / m
    ok = col_mean > 0
    ess = np.where(ok, col_sum**2 / np.where(col_sq > 0, col_sq, 1.0), 0.0)

    W = np.empty(m)
    for rows, P in _density_chunks(theta, eval_set.X, eval_set.y, spec, chunk):
        W[rows] = (P[:, ok] / col_mean[ok]).sum(axis=1) / eval_set.n

    contrib = (W - 1.0) * (nll_train - nll_train.mean())
    est = float(contrib.mean())
    se = float(contrib.std(ddof=1) / math.sqrt(m))
    ess_mean = float(ess.mean())
    degenerate = ess_mean < 10
    if degenerate:
        warnings.warn(f"importance weights degenerate: mean ESS {ess_mean:.1f} < 10", RuntimeWarning)
    return BayesDerivative(est, se, ess_mean, float(ess.min()), degenerate, task.n)


# --- data augmentation -----------------------------------------------------


@dataclass(frozen=True)
class TransformationSet:
    """Finite set of invertible linear maps on feature vectors, uniformly weighted."""

    matrices: tuple
    name: str = "custom"

    def __post_init__(self):
        if not self.matrices:
            raise ValueError("a transformation set must be non-empty")
        for M in self.matrices:
            if abs(np.linalg.det(M)) < 1e-12:
                raise ValueError("every transform must be a bijection")

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.matrices), 1.0 / len(self.matrices))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Stack of transformed design matrices, shape ``(|H|, n, d)``."""
        return np.stack([X @ M.T for M in self.matrices])

    @classmethod
    def identity(cls, d: int) -> "TransformationSet":
        return cls((np.eye(d),), "identity")

    @classmethod
    def cyclic_permutations(cls, d: int) -> "TransformationSet":
        return cls(tuple(np.roll(np.eye(d), k, axis=0) for k in range(d)), "permutation")

    @classmethod
    def sign_flips(cls, d: int) -> "TransformationSet":
        mats = []
        for k in range(d):
            s = np.ones(d)
            s[k] = -1.0
            mats.append(np.diag(s))
        return cls(tuple(mats), "sign-flip")


def da_pseudo_loss(theta: np.ndarray, task: RegressionTask, spec: GaussianModelSpec, transforms: TransformationSet) -> np.ndarray:
    """Per-sample ``(1/n) sum_i mean_h -ln p(y_i | h(x_i), theta)``."""
    theta = np.atleast_2d(theta)
    out = np.zeros(len(theta))
    for Xh in transforms.apply(task.X):
        out -= log_likelihood(theta, Xh, task.y, spec)
    return out / (len(transforms.matrices) * task.n)


def fit_da_tempered_posterior(
    task: RegressionTask, spec: GaussianModelSpec, transforms: TransformationSet, lam: float
) -> TemperedLinRegPosterior:
    """Exact Gaussian posterior proportional to ``exp(-n lam L_DA) * prior``."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    Xs = transforms.apply(task.X)
    H = len(transforms.matrices)
    gram = sum(Xh.T @ Xh for Xh in Xs) / H
    xty = sum(Xh.T @ task.y for Xh in Xs) / H
    return _fit_quadratic(gram, xty, spec, lam)


@dataclass(frozen=True)
class DACovDiagnostics:
    gibbs_grad_cov: float
    gibbs_grad_stderr: float
    bayes_grad_cov: float
    bayes_grad_stderr: float
    neg_s_mean: float
    neg_s_stderr: float
    degenerate: bool


def population_loss(theta: np.ndarray, holdout: RegressionTask, spec: GaussianModelSpec) -> np.ndarray:
    """``L(theta)``: average negative log-likelihood over the holdout sample."""
    theta = np.atleast_2d(theta)
    N = holdout.n
    M = holdout.X.T @ holdout.X / N
    c = holdout.X.T @ holdout.y / N
    s = holdout.y @ holdout.y / N
    msq = np.einsum("ij,jk,ik->i", theta, M, theta) - 2.0 * theta @ c + s
    s2 = spec.likelihood_var
    return 0.5 * (LOG_2PI + math.log(s2)) + msq / (2.0 * s2)


def population_gibbs_loss(post: TemperedLinRegPosterior, holdout: RegressionTask, spec: GaussianModelSpec) -> float:
    """``E_post[L(theta)]`` in closed form."""
    M = holdout.X.T @ holdout.X / holdout.n
    base = float(population_loss(post.mean, holdout, spec)[0])
    return base + float(np.sum(M * post.covariance)) / (2.0 * spec.likelihood_var)


def _cov_with_stderr(a: np.ndarray, b: np.ndarray):
    c = (a - a.mean()) * (b - b.mean())
    return float(c.mean()), float(c.std(ddof=1) / math.sqrt(len(c)))


def da_cov_diagnostics(
    posterior: TemperedLinRegPosterior,
    task: RegressionTask,
    spec: GaussianModelSpec,
    holdout: RegressionTask,
    m: int = 10_000,
    transforms: TransformationSet | None = None,
    seed: int = 0,
    chunk: int = 500,
) -> DACovDiagnostics:
    """Monte Carlo ``-COV(n L_train, L)`` and ``-COV(n L_train, S)`` under ``posterior``.

    ``L_train`` is the DA pseudo-loss when ``transforms`` is given, else the plain
    empirical loss.  The S-score normaliser ``E_post[p(y|x,theta)]`` is the exact
    Gaussian predictive density.
    """
    if m < 1000:
        raise ValueError("m must be >= 1000")
    if holdout.n < 10_000:
        warnings.warn("holdout smaller than 1e4 points approximates the population loosely", RuntimeWarning)
    theta = posterior.sample(m, np.random.default_rng(seed))
    transforms = transforms or TransformationSet.identity(task.d)
    n_train = task.n * da_pseudo_loss(theta, task, spec, transforms) if task.n else np.zeros(m)
    L = population_loss(theta, holdout, spec)

    mu, var = posterior.predictive(holdout.X, spec)
    pred = np.exp(-0.5 * (holdout.y - mu) ** 2 / var) / np.sqrt(2.0 * math.pi * var)
    neg_s = np.empty(m)
    for rows, P in _density_chunks(theta, holdout.X, holdout.y, spec, chunk):
        neg_s[rows] = (P / pred).mean(axis=1)

    degenerate = float(np.var(n_train)) < 1e-14
    if degenerate:
        warnings.warn("training loss has no posterior variance (posterior equals prior)", RuntimeWarning)
        return DACovDiagnostics(0.0, 0.0, 0.0, 0.0, float(neg_s.mean()), float(neg_s.std(ddof=1) / math.sqrt(m)), True)
    g, g_se = _cov_with_stderr(n_train, L)
    b, b_se = _cov_with_stderr(n_train, -neg_s)
    return DACovDiagnostics(
        gibbs_grad_cov=-g,
        gibbs_grad_stderr=g_se,
        bayes_grad_cov=-b,
        bayes_grad_stderr=b_se,
        neg_s_mean=float(neg_s.mean()),
        neg_s_stderr=float(neg_s.std(ddof=1) / math.sqrt(m)),
        degenerate=False,
    )


@dataclass(frozen=True)
class ScanRow:
    lam: float
    gibbs_emp: float
    bayes: float
    dgibbs: float
    dbayes: float
    dbayes_stderr: float


def cpe_scan(
    setting: CPESetting,
    lambdas,
    seed: int = 0,
    eval_size: int = 10_000,
    m: int = 10_000,
    n: int | None = None,
) -> list[ScanRow]:
    task = setting_task(setting, seed, n)
    eval_set = setting_task(setting, seed + 1_000_003, eval_size)
    spec = setting.spec()
    rows = []
    for lam in lambdas:
        post = fit_tempered_posterior(task, spec, lam)
        bd = bayes_derivative(lam, task, spec, eval_set, m=m, seed=seed + 17)
        rows.append(
            ScanRow(
                lam=float(lam),
                gibbs_emp=empirical_gibbs_loss(post, task, spec),
                bayes=bayes_loss(post, spec, eval_set),
                dgibbs=gibbs_derivative(post, task, spec),
                dbayes=bd.estimate,
                dbayes_stderr=bd.stderr,
            )
        )
    return rows


def cpe_at_one(setting: CPESetting, seed: int = 0, eval_size: int = 10_000, m: int = 10_000, n: int | None = None) -> BayesDerivative:
    """Bayes-loss derivative at ``lam = 1``; negative means a cold posterior effect."""
    task = setting_task(setting, seed, n)
    eval_set = setting_task(setting, seed + 1_000_003, eval_size)
    return bayes_derivative(1.0, task, setting.spec(), eval_set, m=m, seed=seed + 17)
