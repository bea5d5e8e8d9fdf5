"""Re-parameterising a tempered posterior as an ordinary Bayesian posterior.

Tempering a likelihood by ``lam`` is the same as using a new (normalised)
likelihood together with a new prior that absorbs the normalisers. These helpers
work with both objects on explicit grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import expit, logit

from .conc import DomainError

LOG_SPACE_LAMBDA = 50.0

# Exponent of lam in the tempered Gaussian variance. Normalising N(mu, s2)^lam
# gives s2 / lam; a power of 2 reproduces the alternative written form.
GAUSSIAN_LAMBDA_POWER = 1


def temper_bernoulli(theta, lam: float):
    """``theta^lam / (theta^lam + (1 - theta)^lam)``, the normalised tempered Bernoulli."""
    if lam <= 0:
        raise DomainError(f"lam must be positive, got {lam!r}")
    theta = np.asarray(theta, dtype=float)
    if np.any((theta < 0) | (theta > 1)):
        raise DomainError("theta must lie in [0, 1]")
    if lam > LOG_SPACE_LAMBDA:
        with np.errstate(divide="ignore"):
            out = expit(lam * logit(theta))
    else:
        a = theta**lam
        out = a / (a + (1.0 - theta) ** lam)
    return float(out) if out.ndim == 0 else out


def temper_gaussian(mu: float, sigma2: float, lam: float, power: int = GAUSSIAN_LAMBDA_POWER):
    """Mean and variance of the normalised density proportional to ``N(mu, sigma2)^lam``."""
    if sigma2 <= 0 or lam <= 0:
        raise DomainError("sigma2 and lam must be positive")
    return mu, sigma2 / lam**power


def gaussian_entropy(sigma2: float) -> float:
    return 0.5 * math.log(2.0 * math.pi * math.e * sigma2)


def bernoulli_entropy(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0) - np.where(p < 1, (1 - p) * np.log1p(-p), 0.0)
    return h


@dataclass(frozen=True)
class EntropyCurve:
    lambdas: np.ndarray
    entropy: np.ndarray

    @property
    def nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self.entropy) <= 0.0))

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.entropy) < 0.0))


def entropy_monotonicity_check(theta: float, lambda_grid) -> EntropyCurve:
    """Entropy of the tempered Bernoulli along an increasing grid of ``lam``."""
    lams = np.asarray(lambda_grid, dtype=float)
    if lams.ndim != 1 or np.any(lams <= 0) or np.any(np.diff(lams) <= 0):
        raise DomainError("lambda_grid must be strictly increasing and positive")
    probs = np.array([temper_bernoulli(theta, lam) for lam in lams])
    return EntropyCurve(lams, bernoulli_entropy(probs))


def default_grid(points: int = 1001) -> np.ndarray:
    """Open grid on (0, 1) so Beta densities with a or b below 1 stay finite."""
    return np.linspace(0.0, 1.0, points + 2)[1:-1]


def _normalise_log(logd: np.ndarray, grid: np.ndarray) -> np.ndarray:
    d = np.exp(logd - np.max(logd))
    return d / np.trapezoid(d, grid)


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or len(g) < 3:
        raise DomainError("grid needs at least 3 points")
    if np.any(np.diff(g) <= 0):
        raise DomainError("grid must be strictly increasing")
    return g


def _log_new_beta_prior(a, b, lam, g):
    # ln(theta^lam + (1-theta)^lam) via logaddexp for large lam
    with np.errstate(divide="ignore"):
        factor = np.logaddexp(lam * np.log(g), lam * np.log1p(-g))
    return stats.beta.logpdf(g, a, b) + factor


def beta_bernoulli_new_prior(a: float, b: float, lam: float, grid=None) -> np.ndarray:
    """Induced prior ``Beta(a, b) * (theta^lam + (1 - theta)^lam)`` for one observation."""
    g = _check_grid(default_grid() if grid is None else grid)
    if a <= 0 or b <= 0 or lam <= 0:
        raise DomainError("a, b and lam must be positive")
    return _normalise_log(_log_new_beta_prior(a, b, lam, g), g)


def inverse_gamma_new_prior(shape: float, scale: float, n: int, lam: float, grid) -> np.ndarray:
    """Inverse-gamma prior on the noise variance times ``gamma^(-n (lam - 1))``.

    The result is again inverse-gamma, with shape ``shape + n (lam - 1)``.
    """
    g = _check_grid(grid)
    if scale <= 0 or lam <= 0 or n < 0:
        raise DomainError("scale and lam must be positive, n nonnegative")
    new_shape = shape + n * (lam - 1.0)
    if shape <= 0 or new_shape <= 0:
        raise DomainError(f"shifted shape {new_shape!r} is not positive: improper prior")
    if np.any(g <= 0):
        raise DomainError("variance grid must be positive")
    return _normalise_log(stats.invgamma.logpdf(g, new_shape, scale=scale), g)


def verify_bayes_equivalence(a: float, b: float, lam: float, y: int, grid=None) -> float:
    """Max gap between the tempered posterior and new-likelihood x new-prior posterior."""
    if y not in (0, 1):
        raise DomainError("y must be 0 or 1")
    g = _check_grid(default_grid() if grid is None else grid)
    prior = stats.beta.logpdf(g, a, b)
    with np.errstate(divide="ignore"):
        tempered = prior + lam * (y * np.log(g) + (1 - y) * np.log1p(-g))
        # log of the normalised tempered likelihood, kept in log space to avoid log1p(-q) cancellation
        log_num = lam * (np.log(g) if y == 1 else np.log1p(-g))
        new_lik = log_num - np.logaddexp(lam * np.log(g), lam * np.log1p(-g))
    rebuilt = new_lik + _log_new_beta_prior(a, b, lam, g)
    return float(np.max(np.abs(_normalise_log(tempered, g) - _normalise_log(rebuilt, g))))
