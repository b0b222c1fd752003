"""Target densities the particle updates can act on.

A target level exposes an unnormalized log-density and its gradient
(score), an integer level index, and a cost weight used by the ledger.
Gaussian targets are provided for tests, smoke runs, and the synthetic
hierarchy used to verify the rate-fitting machinery on planted exponents.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

__all__ = ["TargetLevel", "GaussianTargetLevel", "make_gaussian_hierarchy"]


@runtime_checkable
class TargetLevel(Protocol):
    """Protocol for one member of a target hierarchy.

    Any object with these attributes and methods works; no inheritance
    required.  ``score_batch`` must return one score row per particle row.
    """

    level: int
    cost_weight: float

    def log_density(self, theta: np.ndarray) -> float: ...

    def score(self, theta: np.ndarray) -> np.ndarray: ...

    def score_batch(self, particles: np.ndarray) -> np.ndarray: ...


class GaussianTargetLevel:
    """Diagonal-covariance Gaussian target with analytic score."""

    def __init__(
        self,
        mean: np.ndarray,
        diag_cov: np.ndarray,
        level: int = 1,
        cost_weight: float = 1.0,
    ):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.diag_cov = np.atleast_1d(np.asarray(diag_cov, dtype=float))
        if np.any(self.diag_cov <= 0):
            raise ValueError("variances must be positive")
        self.level = level
        self.cost_weight = cost_weight
        self.n_score_evals = 0
        self.n_density_evals = 0

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_density(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        self.n_density_evals += 1
        diff = theta - self.mean
        return float(
            -0.5 * np.sum(diff * diff / self.diag_cov)
            - 0.5 * np.sum(np.log(2.0 * np.pi * self.diag_cov))
        )

    def score(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        self.n_score_evals += 1
        return -(theta - self.mean) / self.diag_cov

    def score_batch(self, particles: np.ndarray) -> np.ndarray:
        self.n_score_evals += particles.shape[0]
        return -(particles - self.mean[None, :]) / self.diag_cov[None, :]


class ZeroScoreTarget:
    """Improper flat surrogate (score identically zero); test use only."""

    def __init__(self, dim: int, level: int = 1, cost_weight: float = 1.0):
        self.dim = dim
        self.level = level
        self.cost_weight = cost_weight
        self.n_score_evals = 0

    def log_density(self, theta: np.ndarray) -> float:
        return 0.0

    def score(self, theta: np.ndarray) -> np.ndarray:
        self.n_score_evals += 1
        return np.zeros(self.dim)

    def score_batch(self, particles: np.ndarray) -> np.ndarray:
        self.n_score_evals += particles.shape[0]
        return np.zeros_like(particles)


def make_gaussian_hierarchy(
    n_levels: int,
    *,
    dim: int = 2,
    base: float = 2.0,
    kl_rate: float = 2.0,
    cost_rate: float = 2.0,
    limit_mean: float = 0.0,
    variance: float = 1.0,
) -> tuple[list[GaussianTargetLevel], GaussianTargetLevel]:
    """Build an analytic Gaussian hierarchy with planted decay rates.

    Level ``l`` has mean ``limit_mean + sqrt(2 * variance) * base**(-kl_rate*l/2)``
    per component so that KL(level_l || limit) = dim * base**(-kl_rate*l)
    exactly, and cost weight ``base**(cost_rate*l)``.  Returns the levels
    and the limiting target.

    The exact log-linear KL and cost sequences make fitted exponents
    recover ``kl_rate`` and ``cost_rate`` to rounding, which is what the
    rate-fit checks assert.
    """
    if n_levels < 1:
        raise ValueError("need at least one level")
    limit = GaussianTargetLevel(
        np.full(dim, limit_mean), np.full(dim, variance), level=n_levels + 1
    )
    levels = []
    for l in range(1, n_levels + 1):
        offset = np.sqrt(2.0 * variance) * base ** (-kl_rate * l / 2.0)
        levels.append(
            GaussianTargetLevel(
                np.full(dim, limit_mean + offset),
                np.full(dim, variance),
                level=l,
                cost_weight=float(base ** (cost_rate * l)),
            )
        )
    return levels, limit
