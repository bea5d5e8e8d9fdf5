"""KL of a mean-field Gaussian to a shared scalar prior, split into average-KL and MI.

For ``q(theta_1..theta_D) = prod_d q_d(theta_d)`` and a common prior ``p``::

    sum_d KL(q_d || p) = D * (KL(q_avg || p) + I[d, theta])

with ``q_avg = (1/D) sum_d q_d`` and ``I`` the mutual information between a
uniform index ``d`` and ``theta ~ q_d``. The right-hand side is evaluated by
quadrature and compared with the closed-form left-hand side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.special import logsumexp
from scipy.stats import norm

from .conc import DomainError

MIN_NODES = 2001
TAIL_TOL = 1e-10


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DomainError("std must be positive")


@dataclass(frozen=True)
class QuadratureConfig:
    nodes: int = 4001
    width: float = 8.0  # half-window in component standard deviations
    strict: bool = True  # enforce the node floor; off only for convergence studies

    def __post_init__(self):
        if self.strict and self.nodes < MIN_NODES:
            raise DomainError(f"need at least {MIN_NODES} nodes, got {self.nodes}")
        if self.nodes < 3 or self.width <= 0:
            raise DomainError("need >= 3 nodes and a positive width")


@dataclass(frozen=True)
class MixtureTerms:
    kl_avg: float
    mutual_info: float
    kl_avg_err: float
    mutual_info_err: float


def _gauss_kl(m1, s1, m2, s2):
    return np.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5


def _arrays(q):
    if len(q) == 0:
        raise DomainError("need at least one component")
    return np.array([c.mean for c in q], dtype=float), np.array([c.std for c in q], dtype=float)


def meanfield_kl(q: list[Gaussian1D], p: Gaussian1D) -> float:
    m, s = _arrays(q)
    return float(np.sum(_gauss_kl(m, s, p.mean, p.std)))


def _window(m, s, cfg):
    lo = float(np.min(m - cfg.width * s))
    hi = float(np.max(m + cfg.width * s))
    tail = float(np.mean(norm.cdf(lo, m, s) + norm.sf(hi, m, s)))
    if tail > TAIL_TOL:
        raise DomainError(f"quadrature window leaves {tail:.3g} of q_avg's mass outside")
    return lo, hi


def _integrals(m, s, p, grid):
    logq = norm.logpdf(grid[None, :], m[:, None], s[:, None])
    log_avg = logsumexp(logq, axis=0) - math.log(len(m))
    kl_f = np.exp(log_avg) * (log_avg - norm.logpdf(grid, p.mean, p.std))
    mi_f = np.mean(np.exp(logq) * (logq - log_avg[None, :]), axis=0)
    return kl_f, mi_f


def mixture_terms(q: list[Gaussian1D], p: Gaussian1D, cfg: QuadratureConfig = QuadratureConfig()) -> MixtureTerms:
    """``KL(q_avg || p)`` and ``I[d, theta]`` by composite Simpson quadrature.

    The error estimate is the change from halving the node count.
    """
    m, s = _arrays(q)
    nodes = cfg.nodes if cfg.nodes % 2 else cfg.nodes + 1
    grid = np.linspace(*_window(m, s, cfg), nodes)
    kl_f, mi_f = _integrals(m, s, p, grid)
    kl_avg, mi = simpson(kl_f, x=grid), simpson(mi_f, x=grid)
    kl_half, mi_half = simpson(kl_f[::2], x=grid[::2]), simpson(mi_f[::2], x=grid[::2])
    return MixtureTerms(float(kl_avg), float(mi), float(abs(kl_avg - kl_half)), float(abs(mi - mi_half)))


def verify_decomposition(q: list[Gaussian1D], p: Gaussian1D, cfg: QuadratureConfig = QuadratureConfig()) -> float:
    """``|sum_d KL(q_d || p) - D (KL(q_avg || p) + I)|``."""
    t = mixture_terms(q, p, cfg)
    return abs(meanfield_kl(q, p) - len(q) * (t.kl_avg + t.mutual_info))


def generalized_objective(data_fit: float, kl_avg: float, mutual_info: float, D: int, lambda1: float, lambda2: float) -> float:
    """``data_fit + D (kl_avg / lambda1 + mutual_info / lambda2)``; ``lambda2 = inf`` drops the MI term."""
    if lambda1 <= 0 or lambda2 <= 0:
        raise DomainError("lambda1 and lambda2 must be positive")
    return data_fit + D * (kl_avg / lambda1 + mutual_info / lambda2)


def random_configuration(rng: np.random.Generator, max_D: int = 8):
    """A random instance from the sweep used for the identity check."""
    D = int(rng.integers(1, max_D + 1))
    q = [Gaussian1D(float(rng.uniform(-3, 3)), float(rng.uniform(0.2, 2.0))) for _ in range(D)]
    p = Gaussian1D(float(rng.uniform(-3, 3)), float(rng.uniform(0.2, 2.0)))
    return q, p
