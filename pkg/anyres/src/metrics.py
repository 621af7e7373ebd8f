"""Streaming Gaussian feature statistics and the Fréchet distance."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from errors import InvalidArgumentError

LOG = logging.getLogger(__name__)

# Eigenvalues of the covariance product below -CLAMP_TOLERANCE are logged;
# below -ERROR_TOLERANCE the inputs are rejected as non-PSD.
CLAMP_TOLERANCE = 1e-8
ERROR_TOLERANCE = 1e-4


@dataclass(frozen=True)
class FeatureStats:
    """Mean and centered scatter ``m2`` of ``n`` feature vectors."""

    mu: np.ndarray
    m2: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return int(self.mu.shape[0])

    @property
    def sigma(self) -> np.ndarray:
        if self.n < 2:
            raise InvalidArgumentError("covariance needs at least 2 samples")
        return self.m2 / (self.n - 1)

    @classmethod
    def from_moments(cls, mu, sigma, n: int = 2) -> "FeatureStats":
        mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
        return cls(mu=mu, m2=sigma * (n - 1), n=n)

    @classmethod
    def from_features(cls, features: np.ndarray) -> "FeatureStats":
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise InvalidArgumentError(f"expected (N, F) features, got {feats.shape}")
        mu = feats.mean(axis=0)
        centered = feats - mu
        return cls(mu=mu, m2=centered.T @ centered, n=int(feats.shape[0]))

    def merge(self, other: "FeatureStats") -> "FeatureStats":
        """Pairwise combination of two disjoint sample sets."""

        if other.dim != self.dim:
            raise InvalidArgumentError(
                f"cannot merge {self.dim}-d stats with {other.dim}-d stats"
            )
        n = self.n + other.n
        delta = other.mu - self.mu
        mu = self.mu + delta * (other.n / n)
        m2 = self.m2 + other.m2 + np.outer(delta, delta) * (self.n * other.n / n)
        return FeatureStats(mu=mu, m2=m2, n=n)


class StatsAccumulator:
    """Folds feature batches into one FeatureStats."""

    def __init__(self) -> None:
        self.stats: FeatureStats | None = None

    def update(self, features: np.ndarray) -> None:
        batch = FeatureStats.from_features(features)
        self.stats = batch if self.stats is None else self.stats.merge(batch)

    def result(self) -> FeatureStats:
        if self.stats is None or self.stats.n < 2:
            raise InvalidArgumentError("feature statistics need at least 2 samples")
        return self.stats


def feature_stats(features: np.ndarray) -> FeatureStats:
    stats = FeatureStats.from_features(features)
    if stats.n < 2:
        raise InvalidArgumentError("feature statistics need at least 2 samples")
    return stats


def _trace_sqrt_product(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    """``Tr((sigma_a sigma_b)^(1/2))`` from the eigenvalues of the product."""

    eigvals = np.linalg.eigvals(sigma_a @ sigma_b).real
    lowest = float(eigvals.min()) if eigvals.size else 0.0
    if lowest < -ERROR_TOLERANCE:
        raise InvalidArgumentError(
            f"covariance product has eigenvalue {lowest:.3e}; inputs are not PSD"
        )
    if lowest < -CLAMP_TOLERANCE:
        LOG.warning("Clamping negative eigenvalue %.3e in Frechet distance", lowest)
    return float(np.sqrt(np.clip(eigvals, 0.0, None)).sum())


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    if a.dim != b.dim:
        raise InvalidArgumentError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    sigma_a, sigma_b = a.sigma, b.sigma
    diff = a.mu - b.mu
    value = (
        float(diff @ diff)
        + float(np.trace(sigma_a) + np.trace(sigma_b))
        - 2.0 * _trace_sqrt_product(sigma_a, sigma_b)
    )
    return max(value, 0.0)
