"""Exact-oracle validation checks.

Each check returns an :class:`OracleResult` comparing an implementation
against an independent reference (finite differences, dense
diagonalization, closed forms).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn, qbm, rbm
from .metrics import GaussianSummary, frechet_distance, inception_style_score, kl_divergence
from .pimc import PopulationDegeneracyWarning, TrotterConfig, population_anneal
from .streams import split


@dataclass
class OracleResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (tolerance {self.tolerance:.1e}) {self.detail}".rstrip()


def relative_error(a, b) -> float:
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def central_difference(f: Callable[[], float], arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Gradient of ``f()`` with respect to each array, perturbed in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = f()
            arr[idx] = old - h
            down = f()
            arr[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def _random_table(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(np.ones(2**n))


def _random_qbm(rng: np.random.Generator, nv: int, nh: int, gamma=None, scale: float = 1.0) -> qbm.QbmParams:
    g = rng.uniform(0.0, 3.0, nv + nh) if gamma is None else gamma
    return qbm.QbmParams(g, rng.uniform(-scale, scale, nv), rng.uniform(-scale, scale, nh),
                         rng.uniform(-scale, scale, (nv, nh)))


def rbm_gradient_check(seed: int = 0, instances: int = 5, tol: float = 1e-6) -> OracleResult:
    rng = split(seed, "eval")
    worst = 0.0
    for _ in range(instances):
        nv, nh = rng.integers(1, 6), rng.integers(1, 4)
        p = rbm.RbmParams(rng.normal(0, 1, nv), rng.normal(0, 1, nh), rng.normal(0, 1, (nv, nh)))
        table = _random_table(nv, rng)
        fd = central_difference(lambda: rbm.exact_nll(p, table), p.arrays())
        worst = max(worst, relative_error(rbm.exact_grad(p, table).flat(), np.concatenate([g.ravel() for g in fd])))
    return OracleResult("rbm exact_grad vs finite differences", worst < tol, worst, tol)


def qbm_gradient_check(seed: int = 0, instances: int = 5, tol: float = 1e-5) -> OracleResult:
    rng = split(seed, "eval")
    worst = 0.0
    for _ in range(instances):
        nv, nh = rng.integers(1, 5), rng.integers(1, 4)
        p = _random_qbm(rng, nv, nh)
        table = _random_table(nv, rng)
        grad = qbm.exact_bound_gradient(p, table)
        fd = central_difference(lambda: qbm.exact_bound_loss(p, table), p.trainable())
        worst = max(worst, relative_error(np.concatenate([g.ravel() for g in grad.arrays()]),
                                          np.concatenate([g.ravel() for g in fd])))
    return OracleResult("qbm bound_gradient vs finite differences", worst < tol, worst, tol)


def dense_gradient_check(seed: int = 0, tol: float = 1e-5) -> OracleResult:
    rng = split(seed, "eval")
    worst = 0.0
    for acts in (["leaky_relu", "sigmoid", "tanh"], ["tanh", "leaky_relu", "identity"], ["sigmoid", "softmax"]):
        sizes = [5] + [4] * (len(acts) - 1) + [3]
        net = nn.DenseNet.build(sizes, acts, rng)
        for layer in net.layers:
            layer.bias[...] = rng.normal(0, 0.3, layer.bias.shape)
        x = rng.normal(0, 1, (6, 5))
        r = rng.normal(0, 1, (6, 3))

        def loss() -> float:
            return float(np.sum(nn.forward(net, x)[0] * r))

        out, cache = nn.forward(net, x)
        grads, dx = nn.backward(net, cache, r)
        fd = central_difference(loss, net.params() + [x], h=1e-6)
        got = np.concatenate([g.ravel() for g in grads + [dx]])
        worst = max(worst, relative_error(got, np.concatenate([g.ravel() for g in fd])))
    return OracleResult("dense-net backward vs finite differences", worst < tol, worst, tol)


def bound_validity_check(seed: int = 0, instances: int = 200, tol: float = 1e-10) -> OracleResult:
    rng = split(seed, "qbm")
    worst = np.inf
    violations = 0
    for _ in range(instances):
        nv = int(rng.integers(1, 7))
        nh = int(rng.integers(1, 9 - nv))
        p = _random_qbm(rng, nv, nh, scale=1.5)
        table = _random_table(nv, rng)
        gap = qbm.exact_bound_loss(p, table) - qbm.exact_nll(p, table)
        worst = min(worst, gap)
        violations += gap < -tol
    return OracleResult("bound loss >= exact NLL", violations == 0, float(worst), tol,
                        f"({violations} violations in {instances} instances; value is the smallest gap)")


def clamped_phase_check(seed: int = 0, instances: int = 100, tol: float = 1e-12) -> OracleResult:
    rng = split(seed, "pimc")
    worst = 0.0
    for _ in range(instances):
        nv, nh = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        p = _random_qbm(rng, nv, nh, scale=2.0)
        v = 2.0 * rng.integers(0, 2, nv) - 1.0
        H = qbm.clamped_hamiltonian(p, v)
        zs = qbm.spin_configs(nh)
        ops = [np.diag(zs[:, j]) for j in range(nh)]
        exact = np.array(qbm.thermal_expectation(H, ops))
        worst = max(worst, float(np.max(np.abs(qbm.clamped_hidden_expect(p, v) - exact))))
    return OracleResult("clamped hidden expectation vs diagonalization", worst < tol, worst, tol)


def metric_identity_check(seed: int = 0, tol: float = 1e-8) -> OracleResult:
    rng = split(seed, "eval")
    errors = []
    p = rng.dirichlet(np.ones(16))
    errors.append(abs(kl_divergence(p, p)))
    C = 5
    samples = np.arange(1000) % C

    def confident(x):
        return np.eye(C)[np.asarray(x) % C]

    def uniform(x):
        return np.full((len(x), C), 1.0 / C)

    errors.append(abs(inception_style_score(samples, confident, 10).mean - C))
    errors.append(abs(inception_style_score(samples, uniform, 10).mean - 1.0))
    A = rng.normal(size=(4, 4))
    a = GaussianSummary(rng.normal(size=4), A @ A.T + np.eye(4))
    errors.append(abs(frechet_distance(a, a)))
    b = GaussianSummary(a.mean + rng.normal(size=4), a.cov)
    errors.append(abs(frechet_distance(a, b) - float(np.sum((a.mean - b.mean) ** 2))))
    s1, s2 = 0.7, 1.9
    one = frechet_distance(GaussianSummary([0.3], [[s1**2]]), GaussianSummary([-0.4], [[s2**2]]))
    errors.append(abs(one - ((0.7) ** 2 + (s1 - s2) ** 2)))
    worst = max(errors)
    return OracleResult("metric identities (KL, IS endpoints, FID)", worst < tol, worst, tol)


@dataclass
class FidelityInstance:
    n_visible: int
    n_hidden: int
    error_fine: float
    error_coarse: float


def pimc_fidelity_check(seed: int = 0, instances: int = 20, tol: float = 0.05, replicas: int = 1024,
                        anneal_steps: int = 50, sweeps: int = 10, fine: int = 64, coarse: int = 4,
                        max_units: int = 8) -> tuple[OracleResult, list[FidelityInstance]]:
    """Population-annealed moments against exact diagonalization at two Trotter numbers."""
    rng = split(seed, "pimc")
    rows = []
    for _ in range(instances):
        n = int(rng.integers(3, max_units + 1))
        nv = int(rng.integers(1, n))
        p = _random_qbm(rng, nv, n - nv, gamma=2.0)
        exact = qbm.exact_thermal(p)
        errs = []
        for slices in (fine, coarse):
            cfg = TrotterConfig(slices, replicas, anneal_steps, sweeps)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", PopulationDegeneracyWarning)
                _, est = population_anneal(p, cfg, rng)
            errs.append(max(np.max(np.abs(est.first_moments - exact.first_moments)),
                            np.max(np.abs(est.second_moments - exact.second_moments))))
        rows.append(FidelityInstance(nv, n - nv, float(errs[0]), float(errs[1])))
    worst = max(r.error_fine for r in rows)
    trotter_ok = sum(r.error_fine <= r.error_coarse for r in rows)
    passed = worst <= tol and trotter_ok == len(rows)
    detail = f"(error(M={fine}) <= error(M={coarse}) on {trotter_ok}/{len(rows)} instances)"
    return OracleResult(f"PIMC moments within {tol} at M={fine}", passed, worst, tol, detail), rows


def exact_suite(seed: int = 0) -> list[OracleResult]:
    """The fast checks (seconds in total)."""
    return [rbm_gradient_check(seed), qbm_gradient_check(seed), dense_gradient_check(seed),
            bound_validity_check(seed), clamped_phase_check(seed), metric_identity_check(seed)]
