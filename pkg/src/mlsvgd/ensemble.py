"""Particle ensembles and the squared-exponential kernel.

The ensemble is a plain (N, d) array of particle positions plus run
metadata (which hierarchy level last acted on it, how many update steps
it has absorbed).  The kernel is the fixed-bandwidth RBF

    K(a, b) = exp(-||a - b||^2 / (2 * bandwidth)),

with the bandwidth appearing unsquared in the denominator.  The bandwidth
is a user parameter; no median heuristic is applied, so benchmark runs
are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ParticleEnsemble",
    "RbfKernel",
    "kernel_eval",
    "kernel_grad1",
    "init_ensemble",
    "save_ensemble",
    "load_ensemble",
]


@dataclass
class ParticleEnsemble:
    """N particles in d dimensions with run metadata.

    Attributes:
        particles: Positions, shape ``(N, d)``; row i is one particle.
        level_index: Index of the hierarchy level that last updated the
            ensemble; 0 means "no target applied yet".
        iteration: Number of update steps absorbed so far.
        seed: Seed used to draw the initial positions, if known.
    """

    particles: np.ndarray
    level_index: int = 0
    iteration: int = 0
    seed: int | None = None

    def __post_init__(self) -> None:
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        if self.particles.ndim != 2:
            raise ValueError("particles must be a (N, d) matrix")
        n, d = self.particles.shape
        if n < 1 or d < 1:
            raise ValueError(f"need N >= 1 and d >= 1, got shape {(n, d)}")
        if not np.all(np.isfinite(self.particles)):
            raise ValueError("particle positions must be finite")

    @property
    def count(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(
            self.particles.copy(),
            level_index=self.level_index,
            iteration=self.iteration,
            seed=self.seed,
        )

    def mean(self) -> np.ndarray:
        return self.particles.mean(axis=0)


@dataclass(frozen=True)
class RbfKernel:
    """Fixed-bandwidth RBF kernel; K(a, a) = 1 and 0 < K <= 1."""

    bandwidth: float

    def __post_init__(self) -> None:
        if not (self.bandwidth > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    def gram(self, x: np.ndarray) -> np.ndarray:
        """Pairwise kernel matrix K[i, j] = K(x_i, x_j) for rows of x.

        The diagonal is pinned to the exact zero distance so K(t, t) = 1
        holds without rounding residue from the dot-product expansion.
        """
        sq = np.sum(x * x, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
        np.maximum(d2, 0.0, out=d2)
        np.fill_diagonal(d2, 0.0)
        return np.exp(-d2 / (2.0 * self.bandwidth))


def kernel_eval(kernel: RbfKernel, a: np.ndarray, b: np.ndarray) -> float:
    """Evaluate K(a, b) = exp(-||a - b||^2 / (2 * bandwidth))."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.exp(-np.dot(diff, diff) / (2.0 * kernel.bandwidth)))


def kernel_grad1(kernel: RbfKernel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of K with respect to the first argument.

    For the RBF kernel this is ``-(a - b) / bandwidth * K(a, b)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return -(a - b) / kernel.bandwidth * kernel_eval(kernel, a, b)


def init_ensemble(
    count: int,
    mean: np.ndarray,
    diag_cov: np.ndarray,
    seed: int,
) -> ParticleEnsemble:
    """Draw ``count`` i.i.d. Gaussian particles, deterministically per seed.

    Args:
        count: Number of particles N >= 1.
        mean: Mean vector, shape ``(d,)``.
        diag_cov: Per-component variances, shape ``(d,)``; all positive.
        seed: Seed for the PCG64 generator (``np.random.default_rng``).

    Returns:
        A fresh ensemble at iteration 0, level 0.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    diag_cov = np.atleast_1d(np.asarray(diag_cov, dtype=float))
    if mean.shape != diag_cov.shape:
        raise ValueError("mean and diag_cov must have the same length")
    if np.any(diag_cov <= 0):
        raise ValueError("variances must be positive")
    if count < 1:
        raise ValueError("need at least one particle")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, mean.size))
    particles = mean[None, :] + z * np.sqrt(diag_cov)[None, :]
    return ParticleEnsemble(particles, seed=seed)


def save_ensemble(ensemble: ParticleEnsemble, path: str | Path,
                  *, extra_meta: dict | None = None) -> None:
    """Write particles to CSV plus a JSON metadata sidecar.

    The CSV has header ``theta_1,...,theta_d`` and one particle per row.
    The sidecar at ``<path>.meta.json`` records count, dim, level_index,
    iteration, and seed, plus any provenance fields the caller supplies.
    """
    path = Path(path)
    header = ",".join(f"theta_{k + 1}" for k in range(ensemble.dim))
    np.savetxt(path, ensemble.particles, delimiter=",", header=header, comments="")
    meta = {
        "count": ensemble.count,
        "dim": ensemble.dim,
        "level_index": ensemble.level_index,
        "iteration": ensemble.iteration,
        "seed": ensemble.seed,
    }
    if extra_meta:
        meta.update(extra_meta)
    path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=2))


def load_ensemble(path: str | Path) -> ParticleEnsemble:
    """Inverse of :func:`save_ensemble`."""
    path = Path(path)
    particles = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    level_index, iteration, seed = 0, 0, None
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        level_index = meta.get("level_index", 0)
        iteration = meta.get("iteration", 0)
        seed = meta.get("seed")
    return ParticleEnsemble(particles, level_index=level_index, iteration=iteration, seed=seed)
