"""Delayed-rejection adaptive Metropolis sampler and the replicate error
metric used to compare particle means against the chain reference.

The chain runs a Gaussian random walk; on a stage-one rejection a second
proposal is drawn from a down-scaled covariance and accepted with the
delayed-rejection ratio.  The proposal covariance is re-estimated from
the chain history every ``adapt_interval`` iterations after
``adapt_start``, scaled by 2.4^2/d with a small diagonal jitter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DramConfig",
    "Chain",
    "dram_sample",
    "reference_mean",
    "mean_error_metric",
    "mh_log_accept",
    "dr_log_accept",
]


@dataclass(frozen=True)
class DramConfig:
    """Sampler settings.

    Defaults: diagonal 1e-2 initial proposal covariance, 10000 burn-in,
    20000 retained-phase samples thinned by 2, Haario-style adaptation
    every 100 iterations after iteration 1000, second-stage proposal
    scaled by 1/5 on the Cholesky factor, one delayed stage.
    """

    dim: int
    seed: int = 0
    initial_cov_diag: float = 1e-2
    burn_in: int = 10_000
    n_samples: int = 20_000
    thin: int = 2
    adapt_start: int = 1_000
    adapt_interval: int = 100
    adapt_scale: float | None = None  # default 2.4^2 / dim
    jitter: float = 1e-10
    dr_scale: float = 5.0
    use_dr: bool = True
    adapt: bool = True
    start: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.burn_in < 0 or self.n_samples < 1:
            raise ValueError("counts must be positive")
        if self.thin < 1:
            raise ValueError("thinning stride must be >= 1")
        if self.n_samples % self.thin != 0:
            raise ValueError("n_samples must be divisible by the thinning stride")


@dataclass
class Chain:
    """Retained samples plus acceptance diagnostics."""

    samples: np.ndarray                 # (n_samples/thin, d) retained
    retained_indices: np.ndarray        # iteration index of each retained sample
    acceptance_rate_stage1: float
    acceptance_rate_stage2: float
    adapted_cov_history: list[tuple[int, np.ndarray]] = field(default_factory=list)
    warning_long_rejection: bool = False
    max_rejection_streak: int = 0
    n_density_evals: int = 0
    n_solve_failures: int = 0
    proposal_log: list | None = None

    def summary(self) -> dict:
        return {
            "n_retained": int(self.samples.shape[0]),
            "mean": self.samples.mean(axis=0).tolist(),
            "cov": np.atleast_2d(np.cov(self.samples.T, ddof=1)).tolist(),
            "acceptance_rate_stage1": self.acceptance_rate_stage1,
            "acceptance_rate_stage2": self.acceptance_rate_stage2,
            "warning_long_rejection": self.warning_long_rejection,
            "max_rejection_streak": self.max_rejection_streak,
            "n_density_evals": self.n_density_evals,
        }

    def save_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def mh_log_accept(logp_current: float, logp_proposal: float) -> float:
    """Log Metropolis ratio for a symmetric proposal."""
    return min(0.0, logp_proposal - logp_current)


def dr_log_accept(logp_x: float, logp_y1: float, logp_y2: float,
                  quad_y2_to_y1: float, quad_x_to_y1: float) -> float:
    """Log delayed-rejection acceptance for one second-stage proposal.

    Args:
        logp_x: Log density at the current state.
        logp_y1: Log density at the rejected first-stage proposal.
        logp_y2: Log density at the second-stage proposal.
        quad_y2_to_y1: (y1-y2)^T Sigma1^{-1} (y1-y2) under the stage-one
            proposal covariance.
        quad_x_to_y1: (y1-x)^T Sigma1^{-1} (y1-x).

    Returns:
        log alpha_2; -inf when the move is impossible (alpha_1(y2, y1) = 1).
    """
    if logp_y1 >= logp_y2:
        # alpha1(y2 -> y1) = 1, numerator vanishes
        return -math.inf
    log_1m_a1_num = math.log1p(-math.exp(logp_y1 - logp_y2))
    if logp_y1 >= logp_x:
        # alpha1(x -> y1) = 1 would have accepted at stage one
        return -math.inf
    log_1m_a1_den = math.log1p(-math.exp(logp_y1 - logp_x))
    log_q_ratio = -0.5 * (quad_y2_to_y1 - quad_x_to_y1)
    return min(0.0, (logp_y2 - logp_x) + log_q_ratio
               + log_1m_a1_num - log_1m_a1_den)


def dram_sample(target, config: DramConfig, *, rng=None,
                log_proposals: bool = False) -> Chain:
    """Run the sampler against a target exposing ``log_density``.

    Args:
        target: Object with ``log_density(theta) -> float`` (unnormalized).
        config: Sampler settings.
        rng: Override generator (testing); defaults to
            ``np.random.default_rng(config.seed)``.
        log_proposals: Record (state, proposal, stage, log ratio, uniform,
            accepted) tuples for replay verification.

    Returns:
        Chain with every ``thin``-th post-burn-in sample retained.
    """
    d = config.dim
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if config.start is None:
        x = np.zeros(d)
    else:
        x = np.asarray(config.start, dtype=float).copy()
    logp_x = float(target.log_density(x))
    n_evals = 1
    n_failures = 0
    if not np.isfinite(logp_x):
        raise ValueError("chain start has zero density")

    def _eval(theta: np.ndarray) -> float:
        # a failed forward solve at a proposal marks a state the model
        # cannot reach; treat it as zero density (the proposal is
        # rejected) and count the event
        nonlocal n_evals, n_failures
        n_evals += 1
        try:
            return float(target.log_density(theta))
        except RuntimeError:
            n_failures += 1
            return -math.inf

    scale = config.adapt_scale if config.adapt_scale is not None else 2.4**2 / d
    cov = np.eye(d) * config.initial_cov_diag
    chol = np.linalg.cholesky(cov)

    total = config.burn_in + config.n_samples
    states = np.empty((total, d))
    acc1 = 0
    acc2 = 0
    n_stage2 = 0
    streak = 0
    max_streak = 0
    warned = False
    cov_history: list[tuple[int, np.ndarray]] = []
    plog = [] if log_proposals else None
    history_sum = x.copy()
    history_sq = np.outer(x, x)
    n_hist = 1

    for it in range(total):
        y1 = x + chol @ rng.standard_normal(d)
        logp_y1 = _eval(y1)
        log_a1 = mh_log_accept(logp_x, logp_y1)
        u1 = rng.random()
        accepted = (u1 == 0.0) or math.log(u1) < log_a1
        if plog is not None:
            plog.append(("s1", x.copy(), y1.copy(), logp_x, logp_y1, u1, accepted))
        moved = accepted
        if accepted:
            x, logp_x = y1, logp_y1
            acc1 += 1
        elif config.use_dr:
            n_stage2 += 1
            y2 = x + (chol / config.dr_scale) @ rng.standard_normal(d)
            logp_y2 = _eval(y2)
            ci = np.linalg.solve(chol, (y1 - y2))
            quad_21 = float(ci @ ci)
            ci = np.linalg.solve(chol, (y1 - x))
            quad_x1 = float(ci @ ci)
            log_a2 = dr_log_accept(logp_x, logp_y1, logp_y2, quad_21, quad_x1)
            u2 = rng.random()
            accepted2 = (u2 == 0.0 and log_a2 > -math.inf) or math.log(u2) < log_a2
            if plog is not None:
                plog.append(("s2", x.copy(), y2.copy(), logp_x, logp_y2, u2, accepted2))
            if accepted2:
                x, logp_x = y2, logp_y2
                acc2 += 1
                moved = True
        if moved:
            streak = 0
        else:
            streak += 1
            if streak > max_streak:
                max_streak = streak
            if streak >= 1000:
                warned = True
        states[it] = x

        history_sum += x
        history_sq += np.outer(x, x)
        n_hist += 1

        if (config.adapt and it + 1 >= config.adapt_start
                and (it + 1) % config.adapt_interval == 0):
            mean = history_sum / n_hist
            sample_cov = history_sq / n_hist - np.outer(mean, mean)
            cov = scale * sample_cov + config.jitter * np.eye(d)
            try:
                chol = np.linalg.cholesky(cov)
                cov_history.append((it + 1, cov.copy()))
            except np.linalg.LinAlgError:
                cov = cov + 1e-8 * np.eye(d)
                chol = np.linalg.cholesky(cov)
                cov_history.append((it + 1, cov.copy()))

    post = states[config.burn_in:]
    retained = post[::config.thin].copy()
    retained_idx = config.burn_in + config.thin * np.arange(retained.shape[0])
    return Chain(
        samples=retained,
        retained_indices=retained_idx,
        acceptance_rate_stage1=acc1 / total,
        acceptance_rate_stage2=(acc2 / n_stage2) if n_stage2 else 0.0,
        adapted_cov_history=cov_history,
        warning_long_rejection=warned,
        max_rejection_streak=max_streak,
        n_density_evals=n_evals,
        n_solve_failures=n_failures,
        proposal_log=plog,
    )


def reference_mean(chain: Chain) -> np.ndarray:
    """Mean of the retained samples."""
    if chain.samples.shape[0] == 0:
        raise ValueError("chain has no retained samples")
    return chain.samples.mean(axis=0)


def mean_error_metric(reference: np.ndarray, replicate_means: list[np.ndarray],
                      *, expected_count: int = 10) -> float:
    """Mean Euclidean distance of replicate particle means to the reference."""
    if len(replicate_means) != expected_count:
        raise ValueError(
            f"expected {expected_count} replicate means, got {len(replicate_means)}")
    reference = np.asarray(reference, dtype=float)
    return float(np.mean([
        np.linalg.norm(reference - np.asarray(m, dtype=float))
        for m in replicate_means
    ]))
