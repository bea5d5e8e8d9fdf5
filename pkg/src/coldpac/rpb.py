"""Recursive PAC-Bayes: split plans, sequential posterior training and bound evaluation.

Steps are numbered from 1. Chunk ``S_t`` is released at step ``t``; the
validation pool of step ``t`` is ``U_val_t = S_t u ... u S_T``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import pmodel
from .conc import (
    ConfidenceBudget,
    DiscreteSupport,
    DomainError,
    kl_inv_upper,
    mc_correction_bound,
    pac_bayes_kl_bound,
    pac_bayes_split_kl_bound,
    segment_means,
)
from .data import LabeledDataset, split_indices
from .pmodel import ClassifierArch, MeanFieldGaussian, TrainHyper

REPORT_COLUMNS = ["t", "n_val", "F_hat", "kl_over_nval", "E_t", "B_t", "implied_T", "test01"]


@dataclass(frozen=True)
class SplitPlan:
    chunk_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.chunk_sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise DomainError(f"every chunk needs at least one point: {sizes}")
        object.__setattr__(self, "chunk_sizes", sizes)

    @property
    def T(self) -> int:
        return len(self.chunk_sizes)

    @property
    def n(self) -> int:
        return sum(self.chunk_sizes)

    def n_train(self, t: int) -> int:
        return sum(self.chunk_sizes[:t])

    def n_val(self, t: int) -> int:
        return sum(self.chunk_sizes[t - 1 :])


def geometric_split(n: int, T: int) -> SplitPlan:
    """Halve the remaining pool from the last step backwards; ``S_1`` takes the rest."""
    if T < 1 or n < T:
        raise DomainError(f"cannot split {n} points into {T} non-empty chunks")
    sizes, remaining = [], n
    for _ in range(T - 1):
        take = (remaining + 1) // 2
        sizes.append(take)
        remaining -= take
    sizes.append(remaining)
    return SplitPlan(tuple(reversed(sizes)))


def implied_temperature(plan: SplitPlan, t: int) -> float:
    if not 1 <= t <= plan.T:
        raise DomainError(f"t must lie in 1..{plan.T}")
    return plan.chunk_sizes[t - 1] / plan.n_val(t)


def excess_support(gamma: float) -> DiscreteSupport:
    """Values of ``l - gamma l'`` for 0-1 losses: ``(-gamma, 0, 1 - gamma, 1)``."""
    if not 1e-6 <= gamma < 1.0:
        raise DomainError(f"gamma must lie in [1e-6, 1), got {gamma!r}")
    return DiscreteSupport((-gamma, 0.0, 1.0 - gamma, 1.0))


TERNARY_SUPPORT = DiscreteSupport((-1.0, 0.0, 1.0))


def combine_recursion(E_t: float, B_prev: float, gamma: float) -> float:
    return E_t + gamma * B_prev


def excess_empiricals(loss_h, loss_hprime, gamma: float) -> np.ndarray:
    """Segment means of ``l(h) - gamma l(h')`` from per-datum 0-1 losses."""
    loss_h = np.asarray(loss_h, dtype=float)
    if loss_h.size == 0:
        raise DomainError("dataset is empty")
    return segment_means(loss_h - gamma * np.asarray(loss_hprime, dtype=float), excess_support(gamma))


# --- per-datum weight draws ------------------------------------------------


def per_datum_weights(dist: MeanFieldGaussian, indices, seed: int, step: int) -> np.ndarray:
    """One weight draw per datum from a stream keyed by (seed, step, datum index)."""
    eps = np.empty((len(indices), dist.dim))
    for r, i in enumerate(indices):
        eps[r] = np.random.default_rng([seed, step, int(i)]).standard_normal(dist.dim)
    return dist.means + dist.stds * eps


def per_datum_scores(dist, arch, ds: LabeledDataset, indices, seed: int, step: int, chunk: int = 2048):
    out = np.empty((len(indices), arch.class_count))
    for a in range(0, len(indices), chunk):
        idx = indices[a : a + chunk]
        out[a : a + len(idx)] = pmodel.forward_many(arch, per_datum_weights(dist, idx, seed, step), ds.features[idx])
    return out


def gibbs_01(dist, arch, ds: LabeledDataset, seed: int) -> float:
    """Gibbs 0-1 risk estimate with one fresh weight draw per datum."""
    rng = np.random.default_rng(seed)
    losses = []
    for a in range(0, len(ds), 4096):
        X, y = ds.features[a : a + 4096], ds.labels[a : a + 4096]
        W, _ = pmodel.sample_weights(dist, rng, size=len(y))
        losses.append(pmodel.zero_one_loss(pmodel.forward_many(arch, W, X), y))
    return float(np.concatenate(losses).mean())


# --- chain ---------------------------------------------------------------


@dataclass(frozen=True)
class ChainSeeds:
    split: int = 0
    init: int = 1
    train: int = 2
    hprime: int = 3
    evaluate: int = 4


@dataclass
class PosteriorChain:
    arch: ClassifierArch
    posteriors: list[MeanFieldGaussian]
    gammas: list[float]
    plan: SplitPlan
    seeds: ChainSeeds
    delta: float
    data_source: str = ""
    logs: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.plan.T

    def chunks(self) -> list[np.ndarray]:
        return split_indices(self.plan.n, self.plan, self.seeds.split)

    def val_indices(self, t: int) -> np.ndarray:
        return np.concatenate(self.chunks()[t - 1 :])

    def to_json(self) -> dict:
        return {
            "T": self.T,
            "gammas": self.gammas,
            "split_sizes": list(self.plan.chunk_sizes),
            "seeds": asdict(self.seeds),
            "delta": self.delta,
            "data_source": self.data_source,
            "posteriors": [pmodel.dist_to_json(p, self.arch, self.seeds.init) for p in self.posteriors],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PosteriorChain":
        dists = [pmodel.dist_from_json(p) for p in obj["posteriors"]]
        if len(dists) != obj["T"] + 1:
            raise ValueError(f"chain with T={obj['T']} needs {obj['T'] + 1} posteriors, got {len(dists)}")
        return cls(
            arch=dists[0][1],
            posteriors=[d for d, _, _ in dists],
            gammas=[float(g) for g in obj["gammas"]],
            plan=SplitPlan(tuple(obj["split_sizes"])),
            seeds=ChainSeeds(**obj["seeds"]),
            delta=float(obj["delta"]),
            data_source=obj.get("data_source", ""),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "PosteriorChain":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _hprime_bounded_ce(seeds, prior, arch, ds, idx, t, cfg):
    scores = per_datum_scores(prior, arch, ds, idx, seeds.hprime, t)
    return pmodel.bounded_ce_and_grad(scores, ds.labels[idx], cfg)[0]


def train_chain(
    ds: LabeledDataset,
    arch: ClassifierArch,
    T: int,
    gamma: float = 0.5,
    hyper: TrainHyper = TrainHyper(),
    seeds: ChainSeeds = ChainSeeds(),
    sigma0: float = 0.03,
    delta: float = 0.025,
    plan: SplitPlan | None = None,
    data_source: str = "",
) -> PosteriorChain:
    """Train ``pi_1 .. pi_T`` sequentially; ``pi_t`` only reads ``S_t`` and ``pi_{t-1}``."""
    plan = plan or geometric_split(len(ds), T)
    if plan.n != len(ds) or plan.T != T:
        raise DomainError("split plan does not match the dataset size and depth")
    excess_support(gamma)
    chunks = split_indices(len(ds), plan, seeds.split)
    pi0 = pmodel.init_posterior(arch, sigma0, seeds.init)
    posteriors, logs = [pi0], []

    # pi_1: S_1 losses, complexity measured against all n points (B_1 is certified on S)
    idx = chunks[0]
    obj = pmodel.McAllesterObjective(pi0, plan.n, delta, T)
    pi, log = pmodel.train(pi0.copy(), arch, ds.features[idx], ds.labels[idx], obj, hyper, [seeds.train, 1])
    posteriors.append(pi)
    logs.append({"t": 1, "objective": "mcallester", "n_denominator": plan.n, "epochs": log})

    support = excess_support(gamma) if T > 1 else None
    for t in range(2, T + 1):
        prev = posteriors[-1]
        idx = chunks[t - 1]
        ref = _hprime_bounded_ce(seeds, prev, arch, ds, idx, t, hyper.cfg)
        obj = pmodel.ExcessObjective(prev, support, gamma, plan.n_val(t), delta, T)
        pi, log = pmodel.train(prev.copy(), arch, ds.features[idx], ds.labels[idx], obj, hyper, [seeds.train, t], aux=ref)
        posteriors.append(pi)
        logs.append({"t": t, "objective": "split-excess", "n_denominator": plan.n_val(t), "train_size": len(idx), "epochs": log})

    return PosteriorChain(arch, posteriors, [gamma] * (T - 1), plan, seeds, delta, data_source, logs)


# --- evaluation ------------------------------------------------------------


@dataclass
class StepRecord:
    t: int
    n_val: int
    F_hat: float
    segments: list[float]
    kl: float
    kl_over_nval: float
    E_t: float
    B_t: float
    implied_T: float
    test01: float = math.nan
    feasible_gamma: bool | None = None

    def row(self) -> list:
        return [self.t, self.n_val, self.F_hat, self.kl_over_nval, self.E_t, self.B_t, self.implied_T, self.test01]


@dataclass
class BoundReport:
    steps: list[StepRecord]
    delta: float
    delta_prime: float
    method: str = "rpb"
    valid: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def final_bound(self) -> float:
        return self.steps[-1].B_t

    def summary(self) -> dict:
        return {
            "method": self.method,
            "delta": self.delta,
            "delta_prime": self.delta_prime,
            "final_bound": self.final_bound,
            "valid": self.valid,
            **self.extra,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for s in self.steps:
                w.writerow([v if isinstance(v, int) else f"{v:.17g}" for v in s.row()])

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def evaluate_bound_chain(
    chain: PosteriorChain,
    ds: LabeledDataset,
    budget: ConfidenceBudget,
    holdout: LabeledDataset | None = None,
) -> BoundReport:
    """Certify ``E_{pi_T}[L]`` through the recursion ``B_t = E_t + gamma_t B_{t-1}``.

    Each step gets ``delta / T``; the ``1 + 3 (T - 1)`` Monte Carlo estimates share
    ``delta'`` equally. Per-datum draws use one sample of ``pi_t`` (and of
    ``pi_{t-1}`` for the reference) per validation point.
    """
    T, plan, arch, seeds = chain.T, chain.plan, chain.arch, chain.seeds
    if budget.T != T:
        raise DomainError(f"budget is for T={budget.T}, chain has T={T}")
    dprime = budget.delta_prime / (1 + 3 * (T - 1))
    d_step = budget.delta / T
    chunks = chain.chunks()
    steps: list[StepRecord] = []
    valid = True

    def test(dist, t):
        return gibbs_01(dist, arch, holdout, seeds.evaluate * 1000 + t) if holdout is not None else math.nan

    # step 1: PAC-Bayes-kl on all of S
    pi0, pi1 = chain.posteriors[0], chain.posteriors[1]
    idx = np.concatenate(chunks)
    loss = pmodel.zero_one_loss(per_datum_scores(pi1, arch, ds, idx, seeds.evaluate, 1), ds.labels[idx])
    F = float(loss.mean())
    kl = pmodel.gaussian_kl(pi1, pi0)
    valid &= math.isfinite(kl)
    B = pac_bayes_kl_bound(mc_correction_bound(F, len(idx), dprime), kl, plan.n, d_step)
    steps.append(StepRecord(1, plan.n, F, [F], kl, kl / plan.n, B, B, implied_temperature(plan, 1), test(pi1, 1)))

    for t in range(2, T + 1):
        gamma = chain.gammas[t - 2]
        support = excess_support(gamma)
        prev, cur = chain.posteriors[t - 1], chain.posteriors[t]
        idx = chain.val_indices(t)
        y = ds.labels[idx]
        l_h = pmodel.zero_one_loss(per_datum_scores(cur, arch, ds, idx, seeds.evaluate, t), y)
        l_ref = pmodel.zero_one_loss(per_datum_scores(prev, arch, ds, idx, seeds.hprime, t), y)
        seg = excess_empiricals(l_h, l_ref, gamma)
        n_val = plan.n_val(t)
        seg_ub = mc_correction_bound(seg, n_val, dprime)
        kl = pmodel.gaussian_kl(cur, prev)
        valid &= math.isfinite(kl)
        E = pac_bayes_split_kl_bound(support, seg_ub, kl, n_val, d_step)
        B_prev = steps[-1].B_t
        B = combine_recursion(E, B_prev, gamma)
        steps.append(
            StepRecord(
                t, n_val, support.combine(seg), [float(s) for s in seg], kl, kl / n_val, E, B,
                implied_temperature(plan, t), test(cur, t), feasible_gamma=bool(gamma < 1.0 - E / B_prev),
            )
        )
    return BoundReport(steps, budget.delta, budget.delta_prime, "rpb", bool(valid), {"T": T})


# --- baselines -------------------------------------------------------------


class _ERMObjective:
    """Bounded cross-entropy without a complexity term (deterministic ERM)."""

    def __init__(self, prior):
        self.prior = prior

    data_term = pmodel.McAllesterObjective.data_term

    def complexity(self, kl):
        return 0.0, 0.0


def _train_erm(start: MeanFieldGaussian, arch, X, y, hyper, seed):
    point = MeanFieldGaussian(start.means.copy(), np.full(start.dim, math.log(1e-12)))
    out, _ = pmodel.train(point, arch, X, y, _ERMObjective(point), hyper, seed)
    return out.means


def baseline(
    method: str,
    ds: LabeledDataset,
    arch: ClassifierArch,
    hyper: TrainHyper = TrainHyper(),
    budget: ConfidenceBudget = ConfidenceBudget(0.025, 0.01, 1),
    seeds: ChainSeeds = ChainSeeds(),
    sigma0: float = 0.03,
    prior_size: int | None = None,
    holdout: LabeledDataset | None = None,
) -> BoundReport:
    """The three comparison methods: ``uninformed``, ``informed`` and ``informed_excess``."""
    if method not in ("uninformed", "informed", "informed_excess"):
        raise ValueError(f"unknown baseline {method!r}")
    n = len(ds)
    n1 = 0 if method == "uninformed" else (n // 2 if prior_size is None else prior_size)
    if not 0 <= n1 < n:
        raise DomainError("prior_size must leave at least one point for certification")
    pi0 = pmodel.init_posterior(arch, sigma0, seeds.init)
    perm = np.random.default_rng(seeds.split).permutation(n)
    s1, s2 = perm[:n1], perm[n1:]
    n2 = len(s2)

    prior = pi0
    if n1 > 0:
        obj = pmodel.McAllesterObjective(pi0, n1, budget.delta)
        prior, _ = pmodel.train(pi0.copy(), arch, ds.features[s1], ds.labels[s1], obj, hyper, [seeds.train, 1])
    X2, y2 = ds.features[s2], ds.labels[s2]

    if method in ("uninformed", "informed"):
        obj = pmodel.McAllesterObjective(prior, n2, budget.delta)
        rho, _ = pmodel.train(prior.copy(), arch, X2, y2, obj, hyper, [seeds.train, 2])
        loss = pmodel.zero_one_loss(per_datum_scores(rho, arch, ds, s2, seeds.evaluate, 2), y2)
        F = float(loss.mean())
        kl = pmodel.gaussian_kl(rho, prior)
        B = pac_bayes_kl_bound(mc_correction_bound(F, n2, budget.delta_prime), kl, n2, budget.delta)
        test = gibbs_01(rho, arch, holdout, seeds.evaluate) if holdout is not None else math.nan
        step = StepRecord(1, n2, F, [F], kl, kl / n2, B, B, 1.0, test)
        return BoundReport([step], budget.delta, budget.delta_prime, method, math.isfinite(kl), {"prior_size": n1})

    if n1 == 0:
        raise DomainError("informed_excess needs a non-empty prior set")
    h_star = _train_erm(prior, arch, ds.features[s1], ds.labels[s1], hyper, [seeds.train, 3])
    ref_ce = pmodel.bounded_ce_and_grad(pmodel.forward(arch, h_star, X2), y2, hyper.cfg)[0]
    obj = pmodel.ExcessObjective(prior, TERNARY_SUPPORT, 1.0, n2, budget.delta / 2, 1, log_coef=4.0)
    rho, _ = pmodel.train(prior.copy(), arch, X2, y2, obj, hyper, [seeds.train, 2], aux=ref_ce)

    l_h = pmodel.zero_one_loss(per_datum_scores(rho, arch, ds, s2, seeds.evaluate, 2), y2)
    l_star = pmodel.zero_one_loss(pmodel.forward(arch, h_star, X2), y2)
    seg = segment_means(l_h - l_star, TERNARY_SUPPORT)
    seg_ub = mc_correction_bound(seg, n2, budget.delta_prime / 2)
    kl = pmodel.gaussian_kl(rho, prior)
    E = pac_bayes_split_kl_bound(TERNARY_SUPPORT, seg_ub, kl, n2, budget.delta / 2)
    L_star = float(l_star.mean())
    star_bound = kl_inv_upper(L_star, math.log(2.0 / budget.delta) / n2)
    test = gibbs_01(rho, arch, holdout, seeds.evaluate) if holdout is not None else math.nan
    step = StepRecord(1, n2, TERNARY_SUPPORT.combine(seg), [float(s) for s in seg], kl, kl / n2, E, E + star_bound, 1.0, test)
    extra = {"prior_size": n1, "h_star_empirical": L_star, "h_star_bound": star_bound}
    return BoundReport([step], budget.delta, budget.delta_prime, method, math.isfinite(kl), extra)
