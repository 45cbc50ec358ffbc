"""Distribution-distance and sample-quality metrics.

All logarithms are natural.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

NEGATIVE_EIGENVALUE_TOL = 1e-10


def kl_divergence(p, q) -> float:
    """sum p log(p / q); +inf when q vanishes somewhere p does not."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def bernoulli_product_table(means: np.ndarray, configs: np.ndarray) -> np.ndarray:
    """Average over records of prod_i p_i^z_i (1 - p_i)^(1 - z_i), for each config z."""
    means = np.clip(np.asarray(means, dtype=np.float64), 1e-300, 1.0)
    logp = np.log(means)
    log1mp = np.log(np.clip(1.0 - np.asarray(means, dtype=np.float64), 1e-300, 1.0))
    z = configs.astype(np.float64)
    log_table = logp @ z.T + log1mp @ (1.0 - z).T
    return np.exp(log_table).mean(axis=0)


@dataclass
class ScoreReport:
    mean: float
    std_of_mean: float
    batches: int

    def __post_init__(self):
        if self.std_of_mean < 0 or self.batches < 1:
            raise ValueError("invalid score report")


def _entropy(p: np.ndarray, axis=-1) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=axis)


def inception_from_probs(probs: np.ndarray) -> float:
    """exp(S(y) - <S(y|x)>) for one batch of class-probability rows."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("need a non-empty batch of probability rows")
    marginal = probs.mean(axis=0)
    return float(np.exp(_entropy(marginal) - _entropy(probs).mean()))


def inception_style_score(samples, classifier: Callable[[np.ndarray], np.ndarray],
                          batches: int = 10) -> ScoreReport:
    """Inception-style score with the class marginal taken per batch.

    ``classifier`` maps an array of samples to rows of class probabilities.
    The report holds the mean over batches and the standard deviation of
    that mean.
    """
    samples = np.asarray(samples)
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    if batches < 1 or batches > samples.shape[0]:
        raise ValueError("batches must lie in [1, number of samples]")
    scores = []
    for chunk in np.array_split(samples, batches):
        probs = np.asarray(classifier(chunk), dtype=np.float64)
        if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-8):
            raise ValueError("classifier must output probability distributions")
        scores.append(inception_from_probs(probs))
    scores = np.array(scores)
    sem = float(scores.std(ddof=1) / np.sqrt(batches)) if batches > 1 else 0.0
    return ScoreReport(float(scores.mean()), sem, batches)


@dataclass
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        f = self.mean.size
        if self.cov.shape != (f, f):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.cov).max())):
            raise ValueError("covariance must be symmetric")


def feature_summary(samples, feature_extractor: Callable[[np.ndarray], np.ndarray] | None = None) -> GaussianSummary:
    """Sample mean and unbiased covariance of extracted features."""
    feats = np.asarray(samples if feature_extractor is None else feature_extractor(np.asarray(samples)),
                       dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("need at least one feature row")
    n, f = feats.shape
    if n < f + 1:
        warnings.warn(f"{n} samples for {f} features: covariance is rank deficient", RuntimeWarning, stacklevel=2)
    cov = np.cov(feats, rowvar=False, ddof=1) if n > 1 else np.zeros((f, f))
    cov = np.atleast_2d(cov)
    return GaussianSummary(feats.mean(axis=0), 0.5 * (cov + cov.T))


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix; tiny negative eigenvalues clamp to 0."""
    w, V = np.linalg.eigh(0.5 * (a + a.T))
    scale = max(1.0, float(np.abs(w).max()) if w.size else 1.0)
    if w.size and w.min() < -NEGATIVE_EIGENVALUE_TOL * scale:
        raise ValueError(f"matrix is not positive semidefinite (eigenvalue {w.min():.3e})")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The cross term uses Tr (S_a S_b)^(1/2) = Tr (S_a^(1/2) S_b S_a^(1/2))^(1/2),
    which only needs symmetric square roots.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError("feature dimensions differ")
    ra = psd_sqrt(a.cov)
    cross = psd_sqrt(ra @ b.cov @ ra)
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return max(value, 0.0)
