"""Bernoulli kl divergence, its inverses, and the kl-based concentration bounds.

All divergences are in nats. An infinite divergence is returned as ``math.inf``
and is only ever compared against, never added to or multiplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

BISECTION_ITERS = 200
BISECTION_TOL = 0.0  # iterate to adjacent floats, well inside the 1e-12 requirement


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


def _check_prob(name: str, value) -> None:
    arr = np.asarray(value, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {value!r}")


def _check_nonneg(name: str, value) -> None:
    arr = np.asarray(value, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0):
        raise DomainError(f"{name} must be nonnegative, got {value!r}")


def _check_delta(name: str, delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {delta!r}")


@dataclass(frozen=True)
class DiscreteSupport:
    """Ordered support ``b_0 < ... < b_K`` of a discrete random variable."""

    points: tuple[float, ...]
    alphas: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if len(pts) < 2:
            raise DomainError("a discrete support needs at least two points")
        alphas = tuple(b - a for a, b in zip(pts[:-1], pts[1:]))
        if any(not a > 0.0 for a in alphas):
            raise DomainError(f"support points must be strictly increasing: {pts}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "alphas", alphas)

    @property
    def K(self) -> int:
        return len(self.points) - 1

    @property
    def lower(self) -> float:
        return self.points[0]

    @property
    def upper(self) -> float:
        return self.points[-1]

    def combine(self, segment_values: Sequence[float]) -> float:
        """``b_0 + sum_j alpha_j * v_j``."""
        vals = np.asarray(segment_values, dtype=float)
        if vals.shape != (self.K,):
            raise DomainError(f"expected {self.K} segment values, got {vals.shape}")
        return self.points[0] + float(np.dot(self.alphas, vals))


@dataclass(frozen=True)
class ConfidenceBudget:
    delta: float
    delta_prime: float
    T: int = 1

    def __post_init__(self):
        _check_delta("delta", self.delta)
        _check_delta("delta_prime", self.delta_prime)
        if self.delta + self.delta_prime >= 1.0:
            raise DomainError("delta + delta_prime must be < 1")
        if self.T < 1:
            raise DomainError("recursion depth T must be >= 1")


def _xlogy_ratio(a, b):
    """``a * ln(a / b)`` with ``0 ln 0 = 0``; infinite when ``a > 0 = b``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(a > 0.0, a * (np.log(a) - np.log(b)), 0.0)
    return out


def _kl_array(p_hat, p):
    p_hat = np.asarray(p_hat, dtype=float)
    p = np.asarray(p, dtype=float)
    return _xlogy_ratio(p_hat, p) + _xlogy_ratio(1.0 - p_hat, 1.0 - p)


def bernoulli_kl(p_hat, p):
    """kl(p_hat || p) between Bernoulli(p_hat) and Bernoulli(p)."""
    _check_prob("p_hat", p_hat)
    _check_prob("p", p)
    out = _kl_array(p_hat, p)
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def _bisect(p_hat, eps, lo, hi, upper: bool):
    # invariant: kl(p_hat||lo) <= eps for the upper inverse (resp. hi for lower)
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        if np.all((hi - lo <= BISECTION_TOL) | (mid == lo) | (mid == hi)):
            break
        ok = _kl_array(p_hat, mid) <= eps
        if upper:
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        else:
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
    return lo if upper else hi


def kl_inv_upper(p_hat, eps):
    """Largest ``p`` in ``[p_hat, 1]`` with ``kl(p_hat || p) <= eps``.

    Vectorised over numpy arrays; scalars in give a float out.
    """
    _check_prob("p_hat", p_hat)
    _check_nonneg("eps", eps)
    p_hat_a, eps_a = np.broadcast_arrays(
        np.asarray(p_hat, dtype=float), np.asarray(eps, dtype=float)
    )
    # kl(p_hat || p) diverges as p -> 1 unless p_hat = 1
    saturated = p_hat_a >= 1.0
    out = _bisect(p_hat_a, eps_a, p_hat_a.copy(), np.ones_like(p_hat_a), upper=True)
    out = np.where(saturated, 1.0, out)
    out = np.where(eps_a == 0.0, p_hat_a, out)
    return float(out) if out.ndim == 0 else out


def kl_inv_lower(p_hat, eps):
    """Smallest ``p`` in ``[0, p_hat]`` with ``kl(p_hat || p) <= eps``."""
    _check_prob("p_hat", p_hat)
    _check_nonneg("eps", eps)
    p_hat_a, eps_a = np.broadcast_arrays(
        np.asarray(p_hat, dtype=float), np.asarray(eps, dtype=float)
    )
    saturated = p_hat_a <= 0.0
    out = _bisect(p_hat_a, eps_a, np.zeros_like(p_hat_a), p_hat_a.copy(), upper=False)
    out = np.where(saturated, 0.0, out)
    out = np.where(eps_a == 0.0, p_hat_a, out)
    return float(out) if out.ndim == 0 else out


def decompose_discrete(value: float, support: DiscreteSupport) -> np.ndarray:
    """Binary superposition ``(1[v >= b_1], ..., 1[v >= b_K])`` of a support value."""
    if value not in support.points:
        raise DomainError(f"{value!r} is not a support point of {support.points}")
    return (value >= np.asarray(support.points[1:])).astype(int)


def segment_means(values, support: DiscreteSupport) -> np.ndarray:
    """Empirical means of the K binary indicators over a sample of support values."""
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        raise DomainError("cannot take segment means of an empty sample")
    return (vals[:, None] >= np.asarray(support.points[1:])[None, :]).mean(axis=0)


def split_kl_bound(support: DiscreteSupport, p_hat_segments, n: int, delta: float) -> float:
    """Upper confidence bound on the mean of a discrete variable via split-kl."""
    p_hat_segments = np.asarray(p_hat_segments, dtype=float)
    _check_prob("p_hat_segments", p_hat_segments)
    if n < 1:
        raise DomainError("n must be >= 1")
    _check_delta("delta", delta)
    eps = math.log(support.K / delta) / n
    return support.combine(kl_inv_upper(p_hat_segments, eps))


def pac_bayes_kl_bound(emp_loss: float, kl_div: float, n: int, delta: float) -> float:
    """PAC-Bayes-kl upper bound on the expected loss of a posterior."""
    _check_prob("emp_loss", emp_loss)
    _check_nonneg("kl_div", kl_div)
    if n < 1:
        raise DomainError("n must be >= 1")
    _check_delta("delta", delta)
    if math.isinf(kl_div):
        return 1.0
    return kl_inv_upper(emp_loss, (kl_div + math.log(2.0 * math.sqrt(n) / delta)) / n)


def pac_bayes_split_kl_bound(
    support: DiscreteSupport, emp_segments, kl_div: float, n: int, delta: float
) -> float:
    """PAC-Bayes-split-kl upper bound for a loss taking values in ``support``."""
    emp_segments = np.asarray(emp_segments, dtype=float)
    _check_prob("emp_segments", emp_segments)
    _check_nonneg("kl_div", kl_div)
    if n < 1:
        raise DomainError("n must be >= 1")
    _check_delta("delta", delta)
    if math.isinf(kl_div):
        return support.upper
    eps = (kl_div + math.log(2.0 * support.K * math.sqrt(n) / delta)) / n
    return support.combine(kl_inv_upper(emp_segments, eps))


def mcallester_bound(emp_loss: float, kl_div: float, n: int, delta: float) -> float:
    """Square-root relaxation of PAC-Bayes-kl. Optimisation surrogate only."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return emp_loss + math.sqrt(max(kl_div + math.log(2.0 * math.sqrt(n) / delta), 0.0) / (2.0 * n))


def mc_correction_bound(sample_mean, m: int, delta_prime: float):
    """Upper bound on a posterior expectation estimated from ``m`` i.i.d. draws."""
    _check_prob("sample_mean", sample_mean)
    if m < 1:
        raise DomainError("m must be >= 1")
    if not 0.0 < delta_prime <= 1.0:
        raise DomainError(f"delta_prime must lie in (0, 1], got {delta_prime!r}")
    return kl_inv_upper(sample_mean, math.log(1.0 / delta_prime) / m)


# --- coverage harnesses --------------------------------------------------


def split_kl_coverage(support: DiscreteSupport, probs, n: int, delta: float, trials: int, seed: int) -> np.ndarray:
    """Per-trial violation flags of :func:`split_kl_bound` on i.i.d. samples of size ``n``."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (support.K + 1,) or np.any(probs < 0) or not math.isclose(probs.sum(), 1.0):
        raise DomainError("probs must be a distribution over the support points")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, probs, size=trials)
    # segment j mean = fraction of draws at or above b_j
    seg = np.cumsum(counts[:, ::-1], axis=1)[:, ::-1][:, 1:] / n
    eps = math.log(support.K / delta) / n
    bounds = support.points[0] + kl_inv_upper(seg, eps) @ np.asarray(support.alphas)
    return bounds < float(np.dot(probs, support.points))


def pac_bayes_kl_coverage(means, n: int, delta: float, trials: int, seed: int) -> np.ndarray:
    """Violation flags of the PAC-Bayes-kl bound for a finite class under a uniform prior.

    The posterior is a point mass on the empirical risk minimiser, so its KL to
    the prior is ``ln |H|``.
    """
    means = np.asarray(means, dtype=float)
    rng = np.random.default_rng(seed)
    emp = rng.binomial(n, means, size=(trials, len(means))) / n
    pick = np.argmin(emp, axis=1)
    rows = np.arange(trials)
    eps = (math.log(len(means)) + math.log(2.0 * math.sqrt(n) / delta)) / n
    return kl_inv_upper(emp[rows, pick], eps) < means[pick]
