"""Bernoulli restricted Boltzmann machine over {0,1} units.

Energy: ``E(v, h) = -b_v.v - b_h.h - v W h``.  Exact quantities (marginal,
negative log-likelihood, gradient) enumerate the visible configurations and
sum the hidden layer analytically; sampling uses block Gibbs updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logsumexp

from .data import all_configs
from .nn import Adam, xavier_init

ENUMERATION_LIMIT = 20


@dataclass
class RbmParams:
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.visible_bias = np.asarray(self.visible_bias, dtype=np.float64)
        self.hidden_bias = np.asarray(self.hidden_bias, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.visible_bias.size, self.hidden_bias.size):
            raise ValueError(f"weights {self.weights.shape} do not match biases "
                             f"({self.visible_bias.size}, {self.hidden_bias.size})")

    @property
    def n_visible(self) -> int:
        return self.visible_bias.size

    @property
    def n_hidden(self) -> int:
        return self.hidden_bias.size

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int) -> "RbmParams":
        return cls(np.zeros(n_visible), np.zeros(n_hidden), np.zeros((n_visible, n_hidden)))

    @classmethod
    def init(cls, n_visible: int, n_hidden: int, rng: np.random.Generator) -> "RbmParams":
        """Xavier weights, zero biases."""
        return cls(np.zeros(n_visible), np.zeros(n_hidden), xavier_init((n_visible, n_hidden), rng))

    def arrays(self) -> list[np.ndarray]:
        return [self.visible_bias, self.hidden_bias, self.weights]

    def copy(self) -> "RbmParams":
        return RbmParams(*(a.copy() for a in self.arrays()))

    def scaled(self, beta: float) -> "RbmParams":
        return RbmParams(*(beta * a for a in self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def _check_visible(p: RbmParams, v: np.ndarray) -> None:
    if v.shape[-1] != p.n_visible:
        raise ValueError(f"expected {p.n_visible} visible units, got {v.shape[-1]}")


def _check_hidden(p: RbmParams, h: np.ndarray) -> None:
    if h.shape[-1] != p.n_hidden:
        raise ValueError(f"expected {p.n_hidden} hidden units, got {h.shape[-1]}")


def energy(p: RbmParams, v, h):
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    _check_visible(p, v)
    _check_hidden(p, h)
    return -(v @ p.visible_bias) - (h @ p.hidden_bias) - np.einsum("...i,ij,...j->...", v, p.weights, h)


def cond_hidden(p: RbmParams, v) -> np.ndarray:
    """P(h_j = 1 | v) for each hidden unit; ``v`` may hold real Bernoulli means."""
    v = np.asarray(v, dtype=np.float64)
    _check_visible(p, v)
    return expit(v @ p.weights + p.hidden_bias)


def cond_visible(p: RbmParams, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    _check_hidden(p, h)
    return expit(h @ p.weights.T + p.visible_bias)


def free_energy(p: RbmParams, v) -> np.ndarray:
    """-log sum_h exp(-E(v, h))."""
    v = np.asarray(v, dtype=np.float64)
    _check_visible(p, v)
    return -(v @ p.visible_bias) - np.logaddexp(0.0, v @ p.weights + p.hidden_bias).sum(axis=-1)


def _check_enumerable(p: RbmParams) -> None:
    if p.n_visible + p.n_hidden > ENUMERATION_LIMIT:
        raise ValueError(f"{p.n_visible}+{p.n_hidden} units exceed the enumeration limit "
                         f"of {ENUMERATION_LIMIT}")


def log_marginal(p: RbmParams) -> np.ndarray:
    _check_enumerable(p)
    neg_f = -free_energy(p, all_configs(p.n_visible))
    return neg_f - logsumexp(neg_f)


def exact_marginal(p: RbmParams) -> np.ndarray:
    """P(v) over all visible configurations, in :func:`all_configs` order."""
    return np.exp(log_marginal(p))


def exact_nll(p: RbmParams, data_dist: np.ndarray) -> float:
    data_dist = np.asarray(data_dist, dtype=np.float64)
    logp = log_marginal(p)
    if data_dist.shape != logp.shape:
        raise ValueError("data distribution must be a table over all visible configurations")
    mask = data_dist > 0
    return float(-(data_dist[mask] * logp[mask]).sum())


def _phase_stats(p: RbmParams, v: np.ndarray, weights: np.ndarray) -> RbmParams:
    """Weighted averages of v, E[h|v], v E[h|v]^T."""
    h = cond_hidden(p, v)
    return RbmParams(weights @ v, weights @ h, (v * weights[:, None]).T @ h)


def _difference(model: RbmParams, data: RbmParams) -> RbmParams:
    return RbmParams(*(m - d for m, d in zip(model.arrays(), data.arrays())))


def exact_grad(p: RbmParams, data_dist: np.ndarray) -> RbmParams:
    """Gradient of :func:`exact_nll`: free-phase minus clamped-phase expectations."""
    configs = all_configs(p.n_visible).astype(np.float64)
    data_dist = np.asarray(data_dist, dtype=np.float64)
    if data_dist.shape != (configs.shape[0],):
        raise ValueError("data distribution must be a table over all visible configurations")
    return _difference(_phase_stats(p, configs, exact_marginal(p)), _phase_stats(p, configs, data_dist))


def gibbs_step(p: RbmParams, v: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One block-Gibbs sweep v -> h -> v'.  Returns (v', h)."""
    h = (rng.random((v.shape[0], p.n_hidden)) < cond_hidden(p, v)).astype(np.int8)
    v = (rng.random((v.shape[0], p.n_visible)) < cond_visible(p, h)).astype(np.int8)
    return v, h


@dataclass
class PcdState:
    chains: np.ndarray
    k: int = 5

    def __post_init__(self):
        self.chains = np.asarray(self.chains, dtype=np.int8)
        if self.k < 1:
            raise ValueError("need at least one Gibbs step")

    @classmethod
    def init(cls, n_chains: int, n_visible: int, k: int, rng: np.random.Generator) -> "PcdState":
        return cls(rng.integers(0, 2, size=(n_chains, n_visible)).astype(np.int8), k)


def _negative_phase(p: RbmParams, chains: np.ndarray, k: int, rng: np.random.Generator):
    v = chains
    for _ in range(k):
        v, _ = gibbs_step(p, v, rng)
    n = v.shape[0]
    return _phase_stats(p, v.astype(np.float64), np.full(n, 1.0 / n)), v


def _positive_phase(p: RbmParams, minibatch: np.ndarray) -> RbmParams:
    x = np.asarray(minibatch, dtype=np.float64)
    _check_visible(p, x)
    return _phase_stats(p, x, np.full(x.shape[0], 1.0 / x.shape[0]))


def pcd_gradient(p: RbmParams, state: PcdState, minibatch, rng: np.random.Generator) -> tuple[RbmParams, PcdState]:
    """Persistent contrastive divergence estimate of the NLL gradient.

    Rows of ``minibatch`` are Bernoulli means in [0, 1]; the clamped phase
    uses them directly together with mean hidden activations.  The free phase
    continues ``state.chains`` for ``state.k`` block-Gibbs steps.
    """
    _check_visible(p, state.chains)
    positive = _positive_phase(p, minibatch)
    negative, chains = _negative_phase(p, state.chains, state.k, rng)
    return _difference(negative, positive), PcdState(chains, state.k)


def cd_gradient(p: RbmParams, minibatch, k: int, rng: np.random.Generator) -> RbmParams:
    """CD-k: chains restart from Bernoulli draws of the data at every call."""
    x = np.asarray(minibatch, dtype=np.float64)
    positive = _positive_phase(p, x)
    start = (rng.random(x.shape) < x).astype(np.int8)
    negative, _ = _negative_phase(p, start, k, rng)
    return _difference(negative, positive)


@dataclass(frozen=True)
class AnnealSchedule:
    betas: tuple

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.size < 2 or b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise ValueError("schedule must rise strictly from beta=0 to beta=1")
        object.__setattr__(self, "betas", tuple(float(x) for x in b))

    @classmethod
    def linear(cls, rungs: int = 50) -> "AnnealSchedule":
        if rungs < 1:
            raise ValueError("need at least one annealing rung")
        return cls(tuple(np.linspace(0.0, 1.0, rungs + 1)))


def sample_annealed(p: RbmParams, count: int, schedule: Optional[AnnealSchedule],
                    rng: np.random.Generator) -> np.ndarray:
    """Visible samples from independent chains cooled from beta=0 to beta=1.

    Each chain starts from uniform bits and takes one block-Gibbs sweep with
    parameters scaled by every beta of the schedule in turn.
    """
    schedule = schedule or AnnealSchedule.linear()
    v = rng.integers(0, 2, size=(count, p.n_visible)).astype(np.int8)
    for beta in schedule.betas[1:]:
        v, _ = gibbs_step(p.scaled(beta), v, rng)
    return v


@dataclass
class RbmTrainConfig:
    lr: float = 1e-3
    k: int = 5
    batch_size: int = 64
    epochs: int = 30
    beta1: float = 0.5
    beta2: float = 0.9
    persistent: bool = True


@dataclass
class RbmTrainer:
    """Adam on PCD (or CD) gradients, resumable epoch by epoch."""

    params: RbmParams
    config: RbmTrainConfig
    optimizer: Adam = None
    pcd: Optional[PcdState] = None
    epoch: int = 0
    trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.optimizer is None:
            self.optimizer = Adam(self.config.lr, self.config.beta1, self.config.beta2)

    def step(self, minibatch: np.ndarray, rng: np.random.Generator) -> RbmParams:
        if self.config.persistent:
            if self.pcd is None:
                self.pcd = PcdState.init(self.config.batch_size, self.params.n_visible, self.config.k, rng)
            grad, self.pcd = pcd_gradient(self.params, self.pcd, minibatch, rng)
        else:
            grad = cd_gradient(self.params, minibatch, self.config.k, rng)
        self.optimizer.step(self.params.arrays(), grad.arrays())
        return grad

    def run_epoch(self, data: np.ndarray, rng: np.random.Generator) -> None:
        order = rng.permutation(len(data))
        bs = self.config.batch_size
        for start in range(0, len(data), bs):
            self.step(data[order[start : start + bs]], rng)
        self.epoch += 1


def train_rbm(p: RbmParams, data, config: RbmTrainConfig, rng: np.random.Generator,
              on_epoch: Optional[Callable[[int, RbmParams], float]] = None) -> tuple[RbmParams, list]:
    """Train on rows of ``data`` (values in [0, 1]).

    ``on_epoch(epoch, params)`` may return a scalar that is appended to the
    returned trace (e.g. an exact KL divergence).
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    trainer = RbmTrainer(p.copy(), config)
    for _ in range(config.epochs):
        trainer.run_epoch(data, rng)
        if on_epoch is not None:
            trainer.trace.append(on_epoch(trainer.epoch, trainer.params))
    return trainer.params, trainer.trace
