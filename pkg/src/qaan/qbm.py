"""Quantum Boltzmann machine with a stoquastic transverse-field Hamiltonian.

    H = -sum_a Gamma_a X_a - sum_a b_a Z_a - sum_{v,h} W_vh Z_v Z_h

Units are spins in {-1, +1}; basis state ``i`` of the 2**n dimensional Hilbert
space is the spin configuration ``2 * all_configs(n)[i] - 1``.  The transverse
fields are fixed during training; only biases and couplings learn, by
descending the clamped-trace upper bound on the negative log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .data import all_configs, bernoulli_round, bits_to_spins
from .nn import Adam, xavier_init
from .pimc import MomentEstimate, TrotterConfig, population_anneal
from .rbm import RbmParams

DIAGONALIZATION_LIMIT = 12


@dataclass
class QbmParams:
    gamma: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.visible_bias = np.asarray(self.visible_bias, dtype=np.float64)
        self.hidden_bias = np.asarray(self.hidden_bias, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        n = self.visible_bias.size + self.hidden_bias.size
        self.gamma = np.broadcast_to(np.asarray(self.gamma, dtype=np.float64), (n,)).copy()
        if self.weights.shape != (self.visible_bias.size, self.hidden_bias.size):
            raise ValueError("weights must have shape (n_visible, n_hidden)")
        if np.any(self.gamma < 0):
            raise ValueError("transverse fields must be non-negative")

    @property
    def n_visible(self) -> int:
        return self.visible_bias.size

    @property
    def n_hidden(self) -> int:
        return self.hidden_bias.size

    @property
    def n_units(self) -> int:
        return self.n_visible + self.n_hidden

    @property
    def bias(self) -> np.ndarray:
        return np.concatenate([self.visible_bias, self.hidden_bias])

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int, gamma: float = 2.0) -> "QbmParams":
        return cls(gamma, np.zeros(n_visible), np.zeros(n_hidden), np.zeros((n_visible, n_hidden)))

    @classmethod
    def init(cls, n_visible: int, n_hidden: int, rng: np.random.Generator, gamma: float = 2.0) -> "QbmParams":
        return cls(gamma, np.zeros(n_visible), np.zeros(n_hidden), xavier_init((n_visible, n_hidden), rng))

    def trainable(self) -> list[np.ndarray]:
        return [self.visible_bias, self.hidden_bias, self.weights]

    def copy(self) -> "QbmParams":
        return QbmParams(self.gamma.copy(), *(a.copy() for a in self.trainable()))


@dataclass
class QbmGradient:
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    weights: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.visible_bias, self.hidden_bias, self.weights]


def spin_configs(n: int) -> np.ndarray:
    return 2.0 * all_configs(n) - 1.0


def classical_energy(p: QbmParams, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    sv, sh = s[..., : p.n_visible], s[..., p.n_visible :]
    return -(sv @ p.visible_bias) - (sh @ p.hidden_bias) - np.einsum("...i,ij,...j->...", sv, p.weights, sh)


def _check_size(n: int) -> None:
    if n > DIAGONALIZATION_LIMIT:
        raise ValueError(f"{n} units exceed the dense diagonalization limit of {DIAGONALIZATION_LIMIT}")


def hamiltonian(p: QbmParams) -> np.ndarray:
    n = p.n_units
    _check_size(n)
    dim = 2**n
    H = np.diag(classical_energy(p, spin_configs(n)))
    idx = np.arange(dim)
    for a in range(n):
        if p.gamma[a] != 0:
            H[idx, idx ^ (1 << (n - 1 - a))] -= p.gamma[a]
    return H


def thermal_diagonal(H: np.ndarray) -> tuple[np.ndarray, float]:
    """Diagonal of exp(-H)/tr exp(-H) and log tr exp(-H) for symmetric ``H``."""
    w, V = np.linalg.eigh(H)
    boltz = np.exp(-(w - w[0]))
    z = boltz.sum()
    diag = (V**2) @ boltz / z
    return diag, float(-w[0] + np.log(z))


def thermal_expectation(H: np.ndarray, ops: list[np.ndarray]) -> list[float]:
    """tr(rho O) for dense operators ``O``."""
    w, V = np.linalg.eigh(H)
    boltz = np.exp(-(w - w[0]))
    rho = (V * (boltz / boltz.sum())) @ V.T
    return [float(np.sum(rho * O.T)) for O in ops]


@dataclass
class ThermalState:
    """Exact diagonal statistics of the thermal density matrix."""

    probabilities: np.ndarray
    log_partition: float
    first_moments: np.ndarray
    second_moments: np.ndarray
    visible_marginal: np.ndarray

    def moments(self) -> MomentEstimate:
        return MomentEstimate(self.first_moments, self.second_moments, np.inf, self.log_partition)


def exact_thermal(p: QbmParams) -> ThermalState:
    """Thermal expectations of Z_a, Z_v Z_h, and the visible marginal tr(Pi_v rho)."""
    n = p.n_units
    diag, log_z = thermal_diagonal(hamiltonian(p))
    s = spin_configs(n)
    first = diag @ s
    sv, sh = s[:, : p.n_visible], s[:, p.n_visible :]
    second = (sv * diag[:, None]).T @ sh
    marginal = diag.reshape(2**p.n_visible, 2**p.n_hidden).sum(axis=1)
    return ThermalState(diag, log_z, first, second, marginal)


def effective_hidden_field(p: QbmParams, v_spins) -> np.ndarray:
    return p.hidden_bias + np.asarray(v_spins, dtype=np.float64) @ p.weights


def clamped_hidden_expect(p: QbmParams, v_spins) -> np.ndarray:
    """<Z_h> under the clamped Hamiltonian: (b_eff / D) tanh(D), D = sqrt(Gamma^2 + b_eff^2).

    Defined as 0 where D = 0.
    """
    v = np.asarray(v_spins, dtype=np.float64)
    if v.shape[-1] != p.n_visible:
        raise ValueError(f"expected {p.n_visible} visible spins, got {v.shape[-1]}")
    b_eff = effective_hidden_field(p, v)
    D = np.hypot(p.gamma[p.n_visible :], b_eff)
    safe = np.where(D > 0, D, 1.0)
    return np.where(D > 0, b_eff / safe * np.tanh(safe), 0.0)


def clamped_log_trace(p: QbmParams, v_spins) -> np.ndarray:
    """log tr exp(-H_v); the clamped Hamiltonian factorizes over hidden units."""
    v = np.asarray(v_spins, dtype=np.float64)
    D = np.hypot(p.gamma[p.n_visible :], effective_hidden_field(p, v))
    # log(2 cosh D) without overflow
    return v @ p.visible_bias + (D + np.log1p(np.exp(-2.0 * D))).sum(axis=-1)


def clamped_hamiltonian(p: QbmParams, v_spins) -> np.ndarray:
    """Dense H_v on the hidden subspace (the constant visible-bias term included)."""
    v = np.asarray(v_spins, dtype=np.float64)
    hp = QbmParams(p.gamma[p.n_visible :], np.zeros(0), effective_hidden_field(p, v), np.zeros((0, p.n_hidden)))
    return hamiltonian(hp) - (v @ p.visible_bias) * np.eye(2**p.n_hidden)


def _check_table(p: QbmParams, data_dist) -> np.ndarray:
    data_dist = np.asarray(data_dist, dtype=np.float64)
    if data_dist.shape != (2**p.n_visible,):
        raise ValueError("data distribution must be a table over all visible configurations")
    return data_dist


def exact_bound_loss(p: QbmParams, data_dist) -> float:
    """-sum_v P_data(v) log[tr exp(-H_v) / tr exp(-H)]."""
    data_dist = _check_table(p, data_dist)
    _check_size(p.n_units)
    _, log_z = thermal_diagonal(hamiltonian(p))
    mask = data_dist > 0
    v = spin_configs(p.n_visible)[mask]
    return float(-(data_dist[mask] * (clamped_log_trace(p, v) - log_z)).sum())


def exact_nll(p: QbmParams, data_dist) -> float:
    data_dist = _check_table(p, data_dist)
    marginal = exact_thermal(p).visible_marginal
    mask = data_dist > 0
    return float(-(data_dist[mask] * np.log(marginal[mask])).sum())


def positive_phase(p: QbmParams, v_spins, weights: Optional[np.ndarray] = None) -> QbmGradient:
    v = np.atleast_2d(np.asarray(v_spins, dtype=np.float64))
    w = np.full(v.shape[0], 1.0 / v.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    h = clamped_hidden_expect(p, v)
    return QbmGradient(w @ v, w @ h, (v * w[:, None]).T @ h)


def bound_gradient(p: QbmParams, minibatch, neg_stats) -> QbmGradient:
    """Gradient of the bound loss with respect to (visible bias, hidden bias, W).

    ``minibatch`` holds visible spin vectors; ``neg_stats`` supplies free-phase
    ``first_moments`` (all units) and ``second_moments`` (visible x hidden).
    The result is free phase minus clamped phase; Gamma gets no gradient.
    """
    first = np.asarray(neg_stats.first_moments)
    second = np.asarray(neg_stats.second_moments)
    if first.shape != (p.n_units,) or second.shape != p.weights.shape:
        raise ValueError("negative-phase statistics do not match the parameter shapes")
    pos = positive_phase(p, minibatch)
    return QbmGradient(first[: p.n_visible] - pos.visible_bias,
                       first[p.n_visible :] - pos.hidden_bias,
                       second - pos.weights)


def exact_bound_gradient(p: QbmParams, data_dist) -> QbmGradient:
    """Bound gradient with an exactly weighted data table and exact free phase."""
    data_dist = _check_table(p, data_dist)
    stats = exact_thermal(p)
    pos = positive_phase(p, spin_configs(p.n_visible), data_dist)
    return QbmGradient(stats.first_moments[: p.n_visible] - pos.visible_bias,
                       stats.first_moments[p.n_visible :] - pos.hidden_bias,
                       stats.second_moments - pos.weights)


def to_bit_params(p: QbmParams) -> RbmParams:
    """RBM over {0,1} with the same Boltzmann distribution as the Gamma = 0 spin model."""
    W = p.weights
    return RbmParams(2.0 * p.visible_bias - 2.0 * W.sum(axis=1),
                     2.0 * p.hidden_bias - 2.0 * W.sum(axis=0),
                     4.0 * W)


def from_bit_params(r: RbmParams, gamma=0.0) -> QbmParams:
    """Inverse of :func:`to_bit_params`."""
    W = r.weights / 4.0
    return QbmParams(gamma, (r.visible_bias + 2.0 * W.sum(axis=1)) / 2.0,
                     (r.hidden_bias + 2.0 * W.sum(axis=0)) / 2.0, W)


@dataclass
class QbmTrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    beta1: float = 0.5
    beta2: float = 0.9
    negative_phase: str = "pimc"
    sampler: TrotterConfig = field(default_factory=TrotterConfig)


@dataclass
class QbmTrainer:
    """Adam on the bound gradient, one population-annealing run per step."""

    params: QbmParams
    config: QbmTrainConfig
    optimizer: Adam = None
    epoch: int = 0
    trace: list = field(default_factory=list)
    last_stats: Optional[MomentEstimate] = None

    def __post_init__(self):
        if self.optimizer is None:
            self.optimizer = Adam(self.config.lr, self.config.beta1, self.config.beta2)
        if self.config.negative_phase not in ("pimc", "exact"):
            raise ValueError("negative_phase must be 'pimc' or 'exact'")

    def negative_stats(self, rng: np.random.Generator) -> MomentEstimate:
        if self.config.negative_phase == "exact":
            return exact_thermal(self.params).moments()
        _, stats = population_anneal(self.params, self.config.sampler, rng)
        return stats

    def step(self, minibatch: np.ndarray, rng: np.random.Generator,
             neg_stats: Optional[MomentEstimate] = None) -> QbmGradient:
        """One Adam step.  Rows of ``minibatch`` are Bernoulli means in [0, 1]."""
        x = np.asarray(minibatch, dtype=np.float64)
        bits = x.astype(np.int8) if np.all((x == 0) | (x == 1)) else bernoulli_round(x, rng)
        if neg_stats is None:
            neg_stats = self.negative_stats(rng)
        self.last_stats = neg_stats
        grad = bound_gradient(self.params, bits_to_spins(bits), neg_stats)
        self.optimizer.step(self.params.trainable(), grad.arrays())
        return grad

    def run_epoch(self, data: np.ndarray, rng: np.random.Generator) -> None:
        order = rng.permutation(len(data))
        bs = self.config.batch_size
        for start in range(0, len(data), bs):
            self.step(data[order[start : start + bs]], rng)
        self.epoch += 1


def train_qbm(p: QbmParams, data, config: QbmTrainConfig, rng: np.random.Generator,
              on_epoch: Optional[Callable[[int, QbmParams], float]] = None) -> tuple[QbmParams, list]:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    trainer = QbmTrainer(p.copy(), config)
    for _ in range(config.epochs):
        trainer.run_epoch(data, rng)
        if on_epoch is not None:
            trainer.trace.append(on_epoch(trainer.epoch, trainer.params))
    return trainer.params, trainer.trace
