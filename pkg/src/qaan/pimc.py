"""Path-integral Monte Carlo for the transverse-field Boltzmann machine.

The quantum thermal state at inverse temperature ``beta`` is approximated by a
classical system of ``M`` coupled copies (imaginary-time slices) of the spins,
with weight ``exp(-S)`` where

    S = (beta / M) * sum_m E(z^m) + 1/2 * sum_{a,m} ln tanh(beta * Gamma_a / M) z_a^m z_a^{m+1}

and slice ``M + 1`` is identified with slice 1.  ``ln tanh < 0``, so
neighbouring slices are coupled ferromagnetically.  Sites with
``Gamma_a == 0`` have infinite coupling: their imaginary-time column is locked
and only whole-column flips are proposed.  For ``M == 1`` the self-coupling is
a constant and is dropped.

Free-phase moments are estimated by population annealing: replicas start at
beta = 0, are reweighted and resampled at every rung of a linear beta
schedule, and are equilibrated with Metropolis sweeps.  These are
supplemented by exact heat-bath draws of every imaginary-time column of one
layer given the other (a periodic 1-D Ising chain, sampled with 2x2 transfer
matrices), which decorrelate the strongly coupled time direction.

Parameters are any object with ``gamma``, ``visible_bias``, ``hidden_bias``
and ``weights`` arrays (see :class:`qaan.qbm.QbmParams`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp


class PopulationDegeneracyWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class TrotterConfig:
    slices: int = 10
    replicas: int = 64
    anneal_steps: int = 5
    sweeps_per_step: int = 5
    worldline_moves: bool = True

    def __post_init__(self):
        if self.slices < 1:
            raise ValueError("need at least one imaginary-time slice")
        if self.replicas < 1:
            raise ValueError("need at least one replica")
        if self.anneal_steps < 1:
            raise ValueError("need at least one annealing step")
        if self.sweeps_per_step < 0:
            raise ValueError("sweeps_per_step must be non-negative")

    @property
    def betas(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.anneal_steps + 1)


@dataclass
class MomentEstimate:
    """Free-phase <sigma^z_a> and <sigma^z_v sigma^z_h> estimates."""

    first_moments: np.ndarray
    second_moments: np.ndarray
    effective_sample_size: float = float("nan")
    log_partition: Optional[float] = None


@dataclass
class ReplicaPopulation:
    """Spins of shape (replica, slice, site); visible sites come first."""

    spins: np.ndarray
    beta: float
    n_visible: int

    @property
    def n_replicas(self) -> int:
        return self.spins.shape[0]

    @property
    def n_slices(self) -> int:
        return self.spins.shape[1]


def _split(p, z):
    nv = p.visible_bias.size
    return z[..., :nv], z[..., nv:]


def slice_energy(p, z: np.ndarray) -> np.ndarray:
    """Classical energy of each spin configuration along the last axis."""
    zv, zh = _split(p, z)
    return -(zv @ p.visible_bias) - (zh @ p.hidden_bias) - np.einsum("...i,ij,...j->...", zv, p.weights, zh)


def local_fields(p, z: np.ndarray) -> np.ndarray:
    """dE/dz_a with sign flipped: b_a plus the coupling from the other layer."""
    zv, zh = _split(p, z)
    return np.concatenate([p.visible_bias + zh @ p.weights.T, p.hidden_bias + zv @ p.weights], axis=-1)


def slice_coupling(gamma: np.ndarray, beta: float, slices: int) -> np.ndarray:
    """Ferromagnetic coupling J_a = -ln tanh(beta Gamma_a / M) / 2 (inf where Gamma_a = 0)."""
    if beta <= 0:
        raise ValueError("the imaginary-time coupling is undefined at beta <= 0")
    gamma = np.asarray(gamma, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return -0.5 * np.log(np.tanh(beta * gamma / slices))


def mapped_action(p, spins: np.ndarray, beta: float) -> np.ndarray | float:
    """S = beta * (E_cl + E_qm) for one (M, n) block or a (R, M, n) population."""
    z = np.asarray(spins, dtype=np.float64)
    single = z.ndim == 2
    if single:
        z = z[None]
    M = z.shape[1]
    if beta <= 0:
        raise ValueError("beta must be positive")
    action = (beta / M) * slice_energy(p, z).sum(axis=1)
    gamma = np.asarray(p.gamma, dtype=np.float64)
    quantum = gamma > 0
    if M > 1:
        J = slice_coupling(gamma[quantum], beta, M)
        bonds = (z[:, :, quantum] * np.roll(z[:, :, quantum], -1, axis=1)).sum(axis=1)
        action = action - bonds @ J
        frozen = ~quantum
        if frozen.any():
            broken = np.any(z[:, :, frozen] != z[:, :1, frozen], axis=(1, 2))
            action = np.where(broken, np.inf, action)
    return float(action[0]) if single else action


def flip_delta(p, block: np.ndarray, beta: float, m: int, a: int) -> float:
    """Change of :func:`mapped_action` when spin (m, a) of one block is flipped.

    For a site with Gamma_a = 0 the whole column is flipped.
    """
    z = np.asarray(block, dtype=np.float64)
    M = z.shape[0]
    if p.gamma[a] == 0:
        return float(2.0 * (beta / M) * (z[:, a] * local_fields(p, z)[:, a]).sum())
    h = local_fields(p, z[m])[a]
    delta = (beta / M) * h
    if M > 1:
        J = slice_coupling(p.gamma[a], beta, M)
        delta += J * (z[(m - 1) % M, a] + z[(m + 1) % M, a])
    return float(2.0 * z[m, a] * delta)


def _colour_masks(p, M: int) -> list[np.ndarray]:
    """Boolean (M, n) masks; sites within a mask never interact.

    Single-flip sites are coloured by (time colour + layer) mod c, where the
    time ring takes 2 colours for even M and 3 for odd M > 1.
    """
    nv = p.visible_bias.size
    n = nv + p.hidden_bias.size
    layer = np.r_[np.zeros(nv, int), np.ones(n - nv, int)]
    if M == 1:
        ring, c = np.zeros(1, int), 2
    elif M % 2 == 0:
        ring, c = np.arange(M) % 2, 2
    else:
        ring, c = np.r_[np.arange(M - 1) % 2, 2], 3
    colour = (ring[:, None] + layer[None, :]) % c
    quantum = np.asarray(p.gamma) > 0
    masks = [(colour == k) & quantum[None, :] for k in range(c)]
    return [m for m in masks if m.any()]


def mh_sweep(pop: ReplicaPopulation, p, beta: float, rng: np.random.Generator) -> ReplicaPopulation:
    """One Metropolis sweep over every spin of every replica (in place).

    Non-interacting spin groups are updated together; each spin flip is
    accepted with probability min(1, exp(-dS)).  Locked columns (Gamma = 0)
    are updated by whole-column flips, visible layer then hidden layer.
    """
    z = pop.spins
    R, M, n = z.shape
    nv = pop.n_visible
    gamma = np.asarray(p.gamma, dtype=np.float64)
    quantum = gamma > 0
    scale = beta / M
    if quantum.any():
        J = np.zeros(n)
        if M > 1:
            J[quantum] = slice_coupling(gamma[quantum], beta, M)
        for mask in _colour_masks(p, M):
            field = scale * local_fields(p, z)
            if M > 1:
                field += J * (np.roll(z, 1, axis=1) + np.roll(z, -1, axis=1))
            dS = 2.0 * z * field
            accept = rng.random(z.shape) < np.exp(np.minimum(0.0, -dS))
            z[accept & mask] *= -1
    frozen = ~quantum
    for layer in (np.arange(n) < nv, np.arange(n) >= nv):
        cols = frozen & layer
        if not cols.any():
            continue
        dS = 2.0 * scale * (z * local_fields(p, z)).sum(axis=1)
        accept = (rng.random((R, n)) < np.exp(np.minimum(0.0, -dS))) & cols
        z *= np.where(accept, -1.0, 1.0)[:, None, :]
    pop.beta = beta
    return pop


def systematic_resample(weights: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(weights / weights.sum())
    cdf[-1] = 1.0
    positions = (rng.random() + np.arange(count)) / count
    return np.searchsorted(cdf, positions, side="right").clip(max=weights.size - 1)


def _transfer(h: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Entries (T--, T-+, T+-, T++) of exp(h_m s + J s s'), stacked on axis 1: (M, 4, R, K)."""
    eh, eJ = np.exp(h), np.exp(J)
    return np.stack([eJ / eh, 1.0 / (eh * eJ), eh / eJ, eh * eJ], axis=1)


def _mul(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Rescaled 2x2 product of stacked entries (x00, x01, x10, x11)."""
    out = np.stack([x[0] * y[0] + x[1] * y[2], x[0] * y[1] + x[1] * y[3],
                    x[2] * y[0] + x[3] * y[2], x[2] * y[1] + x[3] * y[3]])
    return out / out.sum(axis=0)


def _suffix_products(T: np.ndarray) -> np.ndarray:
    """S[m] = T_m ... T_{M-1} (rescaled), S[M] = identity."""
    M = T.shape[0]
    S = np.empty((M + 1,) + T.shape[1:])
    S[M] = np.stack([np.ones(T.shape[2:]), np.zeros(T.shape[2:]), np.zeros(T.shape[2:]), np.ones(T.shape[2:])])
    for m in range(M - 1, -1, -1):
        S[m] = _mul(T[m], S[m + 1])
    return S


def _line_inputs(pop: ReplicaPopulation, p, beta: float, sites: np.ndarray):
    """Per-line fields (M, R, K) and couplings (K,) for the chosen sites."""
    z = pop.spins
    M = z.shape[1]
    h = np.moveaxis((beta / M) * local_fields(p, z)[:, :, sites], 1, 0)
    gamma = np.asarray(p.gamma, dtype=np.float64)[sites]
    J = slice_coupling(gamma, beta, M) if M > 1 else np.zeros(sites.size)
    return h, J


def _layer_sites(p, nv: int, n: int, layer: int, quantum: bool) -> np.ndarray:
    sites = np.arange(nv) if layer == 0 else np.arange(nv, n)
    q = np.asarray(p.gamma)[sites] > 0
    return sites[q] if quantum else sites[~q]


def worldline_sweep(pop: ReplicaPopulation, p, beta: float, rng: np.random.Generator) -> ReplicaPopulation:
    """Heat-bath resample every imaginary-time column, visible layer then hidden (in place).

    Within a layer the columns are conditionally independent periodic Ising
    chains; each is drawn exactly: slice 0 from its marginal, then slices
    1..M-1 forward given slice 0.  Locked columns (Gamma = 0) are drawn as a
    single spin with field ``sum_m h_m``.
    """
    z = pop.spins
    R, M, n = z.shape
    nv = pop.n_visible
    for layer in (0, 1):
        sites = _layer_sites(p, nv, n, layer, quantum=True)
        if sites.size:
            h, J = _line_inputs(pop, p, beta, sites)
            T = _transfer(h, J)
            S = _suffix_products(T)
            first = rng.random(h.shape[1:]) < S[0, 3] / (S[0, 0] + S[0, 3])
            line = np.empty(h.shape, dtype=bool)
            line[0] = cur = first
            u = rng.random((M - 1,) + h.shape[1:])
            for m in range(M - 1):
                t, nxt = T[m], S[m + 1]
                end_dn = np.where(first, nxt[1], nxt[0])
                end_up = np.where(first, nxt[3], nxt[2])
                w_dn = np.where(cur, t[2], t[0]) * end_dn
                w_up = np.where(cur, t[3], t[1]) * end_up
                line[m + 1] = cur = u[m] * (w_dn + w_up) < w_up
            z[:, :, sites] = np.where(np.moveaxis(line, 0, 1), 1.0, -1.0)
        locked = _layer_sites(p, nv, n, layer, quantum=False)
        if locked.size:
            total = (beta / M) * local_fields(p, z)[:, :, locked].sum(axis=1)
            up = rng.random(total.shape) < 0.5 * (1.0 + np.tanh(total))
            z[:, :, locked] = np.where(up, 1.0, -1.0)[:, None, :]
    pop.beta = beta
    return pop


def line_marginals(pop: ReplicaPopulation, p, beta: float) -> np.ndarray:
    """E[z_a^m | the other layer] for every (replica, slice, site).

    Exact marginals of each periodic chain: P(z^m = s) is proportional to the
    diagonal of the cyclic transfer product starting at slice m.
    """
    z = pop.spins
    R, M, n = z.shape
    nv = pop.n_visible
    out = np.empty_like(z)
    for layer in (0, 1):
        sites = _layer_sites(p, nv, n, layer, quantum=True)
        if sites.size:
            h, J = _line_inputs(pop, p, beta, sites)
            T = _transfer(h, J)
            S = _suffix_products(T)
            prefix = S[M]
            means = np.empty(h.shape)
            for m in range(M):
                s = S[m]
                dn = s[0] * prefix[0] + s[1] * prefix[2]
                up = s[2] * prefix[1] + s[3] * prefix[3]
                means[m] = (up - dn) / (up + dn)
                prefix = _mul(prefix, T[m])
            out[:, :, sites] = np.moveaxis(means, 0, 1)
        locked = _layer_sites(p, nv, n, layer, quantum=False)
        if locked.size:
            total = (beta / M) * local_fields(p, z)[:, :, locked].sum(axis=1)
            out[:, :, locked] = np.tanh(total)[:, None, :]
    return out


def conditional_means(pop: ReplicaPopulation, p, beta: float) -> np.ndarray:
    """E[z_a^m | all other spins] for every (replica, slice, site).

    For locked columns (Gamma_a = 0) the conditional is over the whole column.
    """
    z = pop.spins
    M = z.shape[1]
    gamma = np.asarray(p.gamma, dtype=np.float64)
    quantum = gamma > 0
    fields = (beta / M) * local_fields(p, z)
    total = fields.copy()
    if M > 1 and quantum.any():
        J = np.zeros(gamma.size)
        J[quantum] = slice_coupling(gamma[quantum], beta, M)
        total += J * (np.roll(z, 1, axis=1) + np.roll(z, -1, axis=1))
    out = np.tanh(total)
    if (~quantum).any():
        column = np.tanh(fields.sum(axis=1, keepdims=True))
        out[:, :, ~quantum] = np.broadcast_to(column, z.shape)[:, :, ~quantum]
    return out


def moments(pop: ReplicaPopulation, p=None, beta: Optional[float] = None) -> MomentEstimate:
    """Replica- and slice-averaged <z_a> and <z_v z_h>.

    With parameters and beta supplied, spins are replaced by their exact
    expectations given the other layer (:func:`line_marginals`), which keeps
    the mean and lowers the variance; the cross moment averages the two
    one-sided versions.
    """
    z = pop.spins
    nv = pop.n_visible
    norm = z.shape[0] * z.shape[1]
    if p is None:
        first = z.mean(axis=(0, 1))
        second = np.einsum("rmi,rmj->ij", z[..., :nv], z[..., nv:]) / norm
        return MomentEstimate(first, second)
    c = line_marginals(pop, p, beta)
    first = c.mean(axis=(0, 1))
    second = 0.5 * (np.einsum("rmi,rmj->ij", z[..., :nv], c[..., nv:])
                    + np.einsum("rmi,rmj->ij", c[..., :nv], z[..., nv:])) / norm
    return MomentEstimate(first, second)


def _accumulate(acc: Optional[MomentEstimate], new: MomentEstimate) -> MomentEstimate:
    if acc is None:
        return MomentEstimate(new.first_moments.copy(), new.second_moments.copy())
    acc.first_moments += new.first_moments
    acc.second_moments += new.second_moments
    return acc


def initial_population(n_visible: int, n_sites: int, config: TrotterConfig,
                       rng: np.random.Generator) -> ReplicaPopulation:
    """Exact beta -> 0 sample: uniform spins, identical across slices."""
    s = rng.choice(np.array([-1.0, 1.0]), size=(config.replicas, 1, n_sites))
    return ReplicaPopulation(np.repeat(s, config.slices, axis=1), 0.0, n_visible)


def population_anneal(p, config: TrotterConfig, rng: np.random.Generator) -> tuple[ReplicaPopulation, MomentEstimate]:
    """Anneal a replica population from beta = 0 to beta = 1.

    At every rung the replicas are resampled (systematic resampling back to
    ``config.replicas``) with weights ``exp(-[S_new - S_old])`` and then
    equilibrated with ``config.sweeps_per_step`` Metropolis sweeps.  With
    ``config.worldline_moves`` the last sweep of each rung, and every sweep of
    the final rung, is followed by a :func:`worldline_sweep`.  Moments are
    averaged over the population, the slices and the sweeps of the final rung
    (see :func:`moments`).  The returned estimate carries the smallest
    effective sample size seen and, when every Gamma is zero, an estimate of
    the log partition function.
    """
    nv = p.visible_bias.size
    n = nv + p.hidden_bias.size
    pop = initial_population(nv, n, config, rng)
    classical = not np.any(np.asarray(p.gamma) > 0)
    log_z = n * np.log(2.0)
    prev = np.zeros(config.replicas)
    min_ess = float(config.replicas)
    betas = config.betas[1:]
    acc = None
    for rung, beta in enumerate(betas):
        log_w = -(mapped_action(p, pop.spins, beta) - prev)
        log_z += logsumexp(log_w) - np.log(config.replicas)
        w = np.exp(log_w - log_w.max())
        min_ess = min(min_ess, float(w.sum() ** 2 / (w**2).sum()))
        pop.spins = pop.spins[systematic_resample(w, config.replicas, rng)]
        pop.beta = beta
        last = rung == len(betas) - 1
        for sweep in range(config.sweeps_per_step):
            mh_sweep(pop, p, beta, rng)
            if config.worldline_moves and (last or sweep == config.sweeps_per_step - 1):
                worldline_sweep(pop, p, beta, rng)
            if last:
                acc = _accumulate(acc, moments(pop, p, beta))
        prev = mapped_action(p, pop.spins, beta)
    if min_ess < 2.0:
        warnings.warn(f"population collapsed: effective sample size {min_ess:.2f}",
                      PopulationDegeneracyWarning, stacklevel=2)
    if acc is None:
        est = moments(pop, p, 1.0)
    else:
        n_meas = max(config.sweeps_per_step, 1)
        est = MomentEstimate(acc.first_moments / n_meas, acc.second_moments / n_meas)
    est.effective_sample_size = min_ess
    est.log_partition = float(log_z) if classical else None
    return pop, est


def sample_visible(pop: ReplicaPopulation, count: int, rng: np.random.Generator) -> np.ndarray:
    """Visible spins read from a random slice of randomly chosen replicas.

    Replicas are drawn without replacement while ``count`` allows it and with
    replacement beyond that.
    """
    R = pop.n_replicas
    if count <= R:
        reps = rng.permutation(R)[:count]
    else:
        reps = rng.integers(0, R, size=count)
    sl = rng.integers(0, pop.n_slices, size=count)
    return pop.spins[reps, sl, : pop.n_visible].astype(np.int8)
