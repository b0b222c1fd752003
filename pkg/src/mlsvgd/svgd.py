"""Single-level SVGD: the discrete update, the gradient-norm estimator,
and the fixed-target run loop with adaptive stopping.

One step moves every particle synchronously by

    theta_i += (step / N) * ( sum_j grad1 K(theta_j, theta_i)
                              + sum_j K(theta_j, theta_i) * s_j ),

where s_j is the score of particle j under the current target.  The
stopping statistic is the ensemble average of the per-particle update
direction norms, including the 1/N factor, so that

    mean displacement per step = step * gradient_norm_estimate

holds exactly.  The run loop always performs at least one step and checks
the statistic after each update (repeat-until semantics); the statistic is
computed from the scores already evaluated for that step, so a run costs
exactly iterations * N score evaluations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ensemble import ParticleEnsemble, RbfKernel
from .targets import TargetLevel

__all__ = [
    "SvgdConfig",
    "IterationTrace",
    "SingleLevelResult",
    "SvgdRunError",
    "svgd_step",
    "gradient_norm_estimate",
    "run_single_level",
]


class SvgdRunError(RuntimeError):
    """A run aborted on bad numerics; carries the offending particle index."""

    def __init__(self, message: str, particle_index: int | None = None):
        super().__init__(message)
        self.particle_index = particle_index


@dataclass(frozen=True)
class SvgdConfig:
    """Step size, stopping tolerance, and the iteration safety cap."""

    step_size: float
    tolerance: float
    max_iterations: int = 50_000

    def __post_init__(self) -> None:
        if not (self.step_size >= 0):
            raise ValueError("step_size must be nonnegative")
        if not (self.tolerance > 0):
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class IterationTrace:
    """Per-iteration history of a run.

    Parallel arrays, one entry per iteration: global iteration index,
    level acted on, gradient-norm estimate, cumulative weighted cost,
    and wall-clock seconds since the run started.
    """

    iteration: list[int] = field(default_factory=list)
    level: list[int] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    cum_cost: list[float] = field(default_factory=list)
    wall_seconds: list[float] = field(default_factory=list)

    def append(self, iteration: int, level: int, grad_norm: float,
               cum_cost: float, wall_seconds: float) -> None:
        self.iteration.append(iteration)
        self.level.append(level)
        self.grad_norm.append(grad_norm)
        self.cum_cost.append(cum_cost)
        self.wall_seconds.append(wall_seconds)

    def __len__(self) -> int:
        return len(self.iteration)

    def extend(self, other: "IterationTrace") -> None:
        self.iteration.extend(other.iteration)
        self.level.extend(other.level)
        self.grad_norm.extend(other.grad_norm)
        self.cum_cost.extend(other.cum_cost)
        self.wall_seconds.extend(other.wall_seconds)

    def to_csv(self, path, *, provenance: str | None = None) -> None:
        """Write the trace as CSV: iteration, level, grad_norm, cum_cost,
        wall_seconds; an optional provenance comment line goes first."""
        rows = np.column_stack([
            np.asarray(self.iteration, dtype=float),
            np.asarray(self.level, dtype=float),
            np.asarray(self.grad_norm, dtype=float),
            np.asarray(self.cum_cost, dtype=float),
            np.asarray(self.wall_seconds, dtype=float),
        ])
        header = "iteration,level,grad_norm,cum_cost,wall_seconds"
        if provenance:
            header = f"# {provenance}\n{header}"
        np.savetxt(path, rows, delimiter=",", header=header, comments="")

    @staticmethod
    def read_csv(path) -> np.ndarray:
        """Load a trace CSV as a float matrix, skipping comment lines and
        the column header."""
        lines = [ln for ln in Path(path).read_text().splitlines()
                 if ln.strip() and not ln.startswith("#")]
        return np.loadtxt(lines[1:], delimiter=",", ndmin=2)


@dataclass
class SingleLevelResult:
    """Outcome of one fixed-target run."""

    ensemble: ParticleEnsemble
    trace: IterationTrace
    tolerance_reached: bool
    iterations: int
    score_evaluations: int
    mean_history: np.ndarray  # (iterations, d) particle mean after each step


def _update_direction(particles: np.ndarray, kernel: RbfKernel,
                      scores: np.ndarray) -> np.ndarray:
    """Per-particle update direction v_i, including the 1/N factor."""
    n = particles.shape[0]
    gram = kernel.gram(particles)
    # attraction: sum_j K(theta_j, theta_i) s_j; gram is symmetric
    attract = gram @ scores
    # repulsion: sum_j grad1 K(theta_j, theta_i) = sum_j (theta_i - theta_j)/bw * K_ij
    row_sums = gram.sum(axis=1)
    repulse = (row_sums[:, None] * particles - gram @ particles) / kernel.bandwidth
    return (attract + repulse) / n


def _check_scores(particles: np.ndarray, scores: np.ndarray) -> None:
    scores = np.asarray(scores, dtype=float)
    if scores.shape != particles.shape:
        raise ValueError(
            f"scores shape {scores.shape} does not match particles {particles.shape}"
        )
    bad = ~np.all(np.isfinite(scores), axis=1)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise SvgdRunError(f"non-finite score for particle {idx}", particle_index=idx)


def svgd_step(ensemble: ParticleEnsemble, kernel: RbfKernel,
              scores: np.ndarray, step_size: float) -> ParticleEnsemble:
    """One synchronous update of all particles from a common snapshot.

    Args:
        ensemble: Current particle positions (not modified).
        kernel: RBF kernel.
        scores: Score matrix, row i = score of particle i, shape ``(N, d)``.
        step_size: Euler step.

    Returns:
        A new ensemble with ``iteration`` advanced by one.
    """
    _check_scores(ensemble.particles, scores)
    v = _update_direction(ensemble.particles, kernel, np.asarray(scores, dtype=float))
    return ParticleEnsemble(
        ensemble.particles + step_size * v,
        level_index=ensemble.level_index,
        iteration=ensemble.iteration + 1,
        seed=ensemble.seed,
    )


def gradient_norm_estimate(ensemble: ParticleEnsemble, kernel: RbfKernel,
                           scores: np.ndarray) -> float:
    """Ensemble-average Euclidean norm of the per-particle update direction."""
    _check_scores(ensemble.particles, scores)
    v = _update_direction(ensemble.particles, kernel, np.asarray(scores, dtype=float))
    return float(np.mean(np.linalg.norm(v, axis=1)))


def run_single_level(
    ensemble: ParticleEnsemble,
    target: TargetLevel,
    kernel: RbfKernel,
    config: SvgdConfig,
    *,
    cum_cost_start: float = 0.0,
    wall_start: float | None = None,
) -> SingleLevelResult:
    """Iterate the update on one fixed target until the estimate drops
    below tolerance or the iteration cap is hit.

    At least one step is always performed.  Hitting the cap is reported
    through ``tolerance_reached=False``, not an exception.

    ``cum_cost_start``/``wall_start`` let the multilevel driver stitch
    consecutive segments into one continuous trace.
    """
    t0 = time.perf_counter() if wall_start is None else wall_start
    particles = ensemble.particles.copy()
    iteration = ensemble.iteration
    trace = IterationTrace()
    cum_cost = cum_cost_start
    n = particles.shape[0]
    means = []

    tolerance_reached = False
    steps = 0
    while True:
        scores = target.score_batch(particles)
        _check_scores(particles, np.asarray(scores, dtype=float))
        v = _update_direction(particles, kernel, np.asarray(scores, dtype=float))
        particles = particles + config.step_size * v
        ghat = float(np.mean(np.linalg.norm(v, axis=1)))
        steps += 1
        iteration += 1
        cum_cost += target.cost_weight * n
        trace.append(iteration, target.level, ghat, cum_cost,
                     time.perf_counter() - t0)
        means.append(particles.mean(axis=0))
        if ghat <= config.tolerance:
            tolerance_reached = True
            break
        if steps >= config.max_iterations:
            break

    out = ParticleEnsemble(particles, level_index=target.level,
                           iteration=iteration, seed=ensemble.seed)
    return SingleLevelResult(
        ensemble=out,
        trace=trace,
        tolerance_reached=tolerance_reached,
        iterations=steps,
        score_evaluations=steps * n,
        mean_history=np.asarray(means),
    )
