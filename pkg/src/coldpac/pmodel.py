"""Mean-field Gaussian posteriors over small classifiers, surrogate losses and training.

Gradients are written out by hand: the models are a linear softmax classifier and
a one-hidden-layer ReLU network, small enough that reverse mode fits in a few lines.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .conc import DiscreteSupport


@dataclass(frozen=True)
class ClassifierArch:
    kind: str  # "linear" or "one-hidden"
    input_dim: int
    hidden_dim: int
    class_count: int

    def __post_init__(self):
        if self.kind not in ("linear", "one-hidden"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.kind == "linear" and self.hidden_dim != 0:
            raise ValueError("linear architectures have hidden_dim 0")
        if self.kind == "one-hidden" and self.hidden_dim < 1:
            raise ValueError("one-hidden architectures need hidden_dim >= 1")

    @classmethod
    def linear(cls, input_dim: int, class_count: int) -> "ClassifierArch":
        return cls("linear", input_dim, 0, class_count)

    @classmethod
    def one_hidden(cls, input_dim: int, hidden_dim: int, class_count: int) -> "ClassifierArch":
        return cls("one-hidden", input_dim, hidden_dim, class_count)

    def layer_shapes(self) -> list[tuple[int, int]]:
        if self.kind == "linear":
            return [(self.input_dim, self.class_count)]
        return [(self.input_dim, self.hidden_dim), (self.hidden_dim, self.class_count)]

    @property
    def param_count(self) -> int:
        return sum(a * b + b for a, b in self.layer_shapes())


def unpack(arch: ClassifierArch, w: np.ndarray):
    """Split a flat parameter vector (or a batch of them, last axis) into (W, b) pairs."""
    out, pos = [], 0
    for fan_in, fan_out in arch.layer_shapes():
        W = w[..., pos : pos + fan_in * fan_out].reshape(w.shape[:-1] + (fan_in, fan_out))
        pos += fan_in * fan_out
        b = w[..., pos : pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


@dataclass
class MeanFieldGaussian:
    means: np.ndarray
    log_stds: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.log_stds = np.asarray(self.log_stds, dtype=float)
        if self.means.shape != self.log_stds.shape or self.means.ndim != 1:
            raise ValueError("means and log_stds must be vectors of equal length")
        if not (np.all(np.isfinite(self.means)) and np.all(np.isfinite(self.log_stds))):
            raise ValueError("parameters must be finite")

    @property
    def stds(self) -> np.ndarray:
        return np.exp(self.log_stds)

    @property
    def dim(self) -> int:
        return len(self.means)

    def copy(self) -> "MeanFieldGaussian":
        return MeanFieldGaussian(self.means.copy(), self.log_stds.copy())


@dataclass(frozen=True)
class SurrogateConfig:
    c1: float = 5.0
    c2: float = 5.0
    p_min: float = 1e-5

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be positive")
        if not 0.0 < self.p_min < 1.0:
            raise ValueError("p_min must lie in (0, 1)")


def init_posterior(arch: ClassifierArch, sigma0: float, seed: int) -> MeanFieldGaussian:
    """Means uniform on +-1/sqrt(fan_in) per layer, every std equal to ``sigma0``."""
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    rng = np.random.default_rng(seed)
    parts = []
    for fan_in, fan_out in arch.layer_shapes():
        bound = 1.0 / math.sqrt(fan_in) if fan_in else 0.0
        parts.append(rng.uniform(-bound, bound, fan_in * fan_out + fan_out))
    means = np.concatenate(parts) if parts else np.zeros(0)
    return MeanFieldGaussian(means, np.full(arch.param_count, math.log(sigma0)))


def sample_weights(dist: MeanFieldGaussian, rng: np.random.Generator, size: int | None = None):
    """Reparameterised draw ``means + stds * eps``; returns ``(w, eps)``."""
    shape = (dist.dim,) if size is None else (size, dist.dim)
    eps = rng.standard_normal(shape)
    return dist.means + dist.stds * eps, eps


def forward(arch: ClassifierArch, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    return _forward(arch, w, X)[0]


def _forward(arch, w, X):
    layers = unpack(arch, w)
    if arch.kind == "linear":
        (W, b), = layers
        return X @ W + b, None
    (W1, b1), (W2, b2) = layers
    pre = X @ W1 + b1
    h = np.maximum(pre, 0.0)
    return h @ W2 + b2, (pre, h)


def backward(arch: ClassifierArch, w: np.ndarray, X: np.ndarray, dscores: np.ndarray) -> np.ndarray:
    """Gradient in ``w`` of ``sum(dscores * forward(arch, w, X))``."""
    _, cache = _forward(arch, w, X)
    if arch.kind == "linear":
        return np.concatenate([(X.T @ dscores).ravel(), dscores.sum(axis=0)])
    (W1, _), (W2, _) = unpack(arch, w)
    pre, h = cache
    dh = (dscores @ W2.T) * (pre > 0)
    return np.concatenate(
        [(X.T @ dh).ravel(), dh.sum(axis=0), (h.T @ dscores).ravel(), dscores.sum(axis=0)]
    )


def forward_many(arch: ClassifierArch, W: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Scores of datum ``i`` under its own weight vector ``W[i]``."""
    layers = unpack(arch, W)
    if arch.kind == "linear":
        (A, b), = layers
        return np.einsum("nd,ndk->nk", X, A) + b
    (A1, b1), (A2, b2) = layers
    h = np.maximum(np.einsum("nd,ndh->nh", X, A1) + b1, 0.0)
    return np.einsum("nh,nhk->nk", h, A2) + b2


def _log_softmax(u):
    z = u - u.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def bounded_ce_and_grad(scores: np.ndarray, labels: np.ndarray, cfg: SurrogateConfig):
    """Per-datum bounded cross-entropy and its gradient in the scores."""
    scores = np.atleast_2d(scores)
    labels = np.atleast_1d(labels)
    logp = _log_softmax(cfg.c2 * scores)
    rows = np.arange(len(labels))
    logp_y = logp[rows, labels]
    log_floor = math.log(cfg.p_min)
    scale = -log_floor  # ln(1/p_min)
    value = -np.maximum(logp_y, log_floor) / scale
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad *= (cfg.c2 / scale) * (logp_y > log_floor)[:, None]
    return value, grad


def bounded_cross_entropy(scores, label, cfg: SurrogateConfig = SurrogateConfig()):
    """``-ln max(softmax(c2 * scores)_Y, p_min) / ln(1/p_min)``, in [0, 1]."""
    value, _ = bounded_ce_and_grad(scores, label, cfg)
    return float(value[0]) if np.ndim(label) == 0 else value


def zero_one_loss(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return (np.argmax(scores, axis=-1) != labels).astype(float)


def smooth_indicator(z, z0: float, c1: float):
    """Logistic ``1 / (1 + exp(-c1 (z - z0)))``, a smooth stand-in for ``1[z >= z0]``."""
    out = 1.0 / (1.0 + np.exp(-c1 * (np.asarray(z, dtype=float) - z0)))
    return float(out) if np.ndim(out) == 0 else out


def gaussian_kl(q: MeanFieldGaussian, p: MeanFieldGaussian) -> float:
    if q.dim != p.dim:
        raise ValueError("dimension mismatch")
    vq, vp = np.exp(2 * q.log_stds), np.exp(2 * p.log_stds)
    terms = p.log_stds - q.log_stds + (vq + (q.means - p.means) ** 2) / (2 * vp) - 0.5
    return max(float(np.sum(terms)), 0.0)


def gaussian_kl_grad(q: MeanFieldGaussian, p: MeanFieldGaussian):
    """Gradient of ``gaussian_kl(q, p)`` in ``(q.means, q.log_stds)``."""
    vp = np.exp(2 * p.log_stds)
    return (q.means - p.means) / vp, np.exp(2 * q.log_stds) / vp - 1.0


# --- objectives --------------------------------------------------------------


@dataclass(frozen=True)
class McAllesterObjective:
    """``mean bounded-CE + sqrt((KL(q||prior) + ln(2 T sqrt(n) / delta)) / (2 n))``."""

    prior: MeanFieldGaussian
    n: int
    delta: float
    T: int = 1

    @property
    def log_term(self) -> float:
        return math.log(2.0 * self.T * math.sqrt(self.n) / self.delta)

    def data_term(self, arch, w, X, y, aux, cfg):
        value, g = bounded_ce_and_grad(forward(arch, w, X), y, cfg)
        return float(value.mean()), backward(arch, w, X, g / len(y))

    def complexity(self, kl: float):
        """Value and derivative in KL of the square-root penalty."""
        r = math.sqrt((kl + self.log_term) / (2.0 * self.n))
        return r, 1.0 / (4.0 * self.n * r)


@dataclass(frozen=True)
class ExcessObjective:
    """Smoothed split-kl surrogate for ``L(h) - gamma * L(h')`` with McAllester slack.

    ``aux`` holds the bounded CE of the reference draw ``h'`` on each datum.
    """

    prior: MeanFieldGaussian
    support: DiscreteSupport
    gamma: float
    n_val: int
    delta: float
    T: int = 1
    log_coef: float = 6.0  # 2 K with K = 3 segments

    @property
    def log_term(self) -> float:
        return math.log(self.log_coef * self.T * math.sqrt(self.n_val) / self.delta)

    def data_term(self, arch, w, X, y, aux, cfg):
        value, g = bounded_ce_and_grad(forward(arch, w, X), y, cfg)
        z = value - self.gamma * aux
        total, dz = self.support.lower, np.zeros_like(z)
        for alpha, b in zip(self.support.alphas, self.support.points[1:]):
            s = smooth_indicator(z, b, cfg.c1)
            total += alpha * float(np.mean(s))
            dz += alpha * cfg.c1 * s * (1.0 - s)
        return total, backward(arch, w, X, g * (dz / len(y))[:, None])

    def complexity(self, kl: float):
        a = sum(self.support.alphas)
        r = math.sqrt((kl + self.log_term) / (2.0 * self.n_val))
        return a * r, a / (4.0 * self.n_val * r)


def objective_value_and_grad(dist, arch, X, y, aux, objective, cfg, eps):
    """One-sample reparameterised estimate of the objective and its gradient."""
    w = dist.means + dist.stds * eps
    data, gw = objective.data_term(arch, w, X, y, aux, cfg)
    kl = gaussian_kl(dist, objective.prior)
    pen, dpen = objective.complexity(kl)
    gk_mu, gk_s = gaussian_kl_grad(dist, objective.prior)
    g_mu = gw + dpen * gk_mu
    g_s = gw * eps * dist.stds + dpen * gk_s
    return data + pen, g_mu, g_s, {"data": data, "kl": kl, "penalty": pen}


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.001
    momentum: float = 0.95
    batch_size: int = 250
    epochs: int = 30
    tie_stds: bool = False
    cfg: SurrogateConfig = field(default_factory=SurrogateConfig)


@dataclass
class OptimizerState:
    v_mu: np.ndarray
    v_s: np.ndarray
    steps: int = 0
    rejected: int = 0

    @classmethod
    def zeros(cls, d: int) -> "OptimizerState":
        return cls(np.zeros(d), np.zeros(d))


def objective_grad_step(dist, arch, batch, objective, state: OptimizerState, hyper: TrainHyper, rng):
    """One SGD-with-momentum step on (means, log_stds) from a single weight draw."""
    X, y, aux = batch
    _, eps = sample_weights(dist, rng)
    value, g_mu, g_s, info = objective_value_and_grad(dist, arch, X, y, aux, objective, hyper.cfg, eps)
    if hyper.tie_stds:
        g_s = np.full_like(g_s, g_s.sum())
    if not (np.all(np.isfinite(g_mu)) and np.all(np.isfinite(g_s)) and math.isfinite(value)):
        state.rejected += 1
        return dist, state, info
    state.v_mu = hyper.momentum * state.v_mu + g_mu
    state.v_s = hyper.momentum * state.v_s + g_s
    new = MeanFieldGaussian(dist.means - hyper.lr * state.v_mu, dist.log_stds - hyper.lr * state.v_s)
    state.steps += 1
    info["objective"] = value
    return new, state, info


def train(dist, arch, X, y, objective, hyper: TrainHyper, seed: int, aux=None):
    """Run ``hyper.epochs`` epochs; returns the final distribution and per-epoch logs."""
    if len(y) == 0:
        return dist.copy(), []
    aux = np.zeros(len(y)) if aux is None else np.asarray(aux, dtype=float)
    state = OptimizerState.zeros(dist.dim)
    log = []
    for epoch in range(hyper.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(y))
        rng = np.random.default_rng([seed, epoch, 1])
        vals = []
        for a in range(0, len(y), hyper.batch_size):
            idx = order[a : a + hyper.batch_size]
            dist, state, info = objective_grad_step(dist, arch, (X[idx], y[idx], aux[idx]), objective, state, hyper, rng)
            vals.append(info.get("objective", math.nan))
        log.append({"epoch": epoch, "objective": float(np.nanmean(vals)), "kl": gaussian_kl(dist, objective.prior), "rejected": state.rejected})
    return dist, log


# --- serialization -----------------------------------------------------------


def dist_to_json(dist: MeanFieldGaussian, arch: ClassifierArch, seed: int) -> dict:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return {"arch": asdict(arch), "means": dist.means.tolist(), "log_stds": dist.log_stds.tolist(), "seed": seed}


def dist_from_json(obj: dict):
    arch = ClassifierArch(**obj["arch"])
    dist = MeanFieldGaussian(np.array(obj["means"], dtype=float), np.array(obj["log_stds"], dtype=float))
    if dist.dim != arch.param_count:
        raise ValueError(f"posterior has {dist.dim} parameters, architecture needs {arch.param_count}")
    return dist, arch, int(obj["seed"])


def dumps(dist: MeanFieldGaussian, arch: ClassifierArch, seed: int) -> str:
    return json.dumps(dist_to_json(dist, arch, seed))


def loads(text: str):
    return dist_from_json(json.loads(text))
