"""Multilevel driver: chain single-level runs through a target hierarchy,
carrying the converged ensemble of each level into the next, with cost
accounting per level.

The schedule is a strictly increasing list of level indices ending at the
highest level to be used; the degenerate schedule ``[L]`` reproduces
single-level behavior bit for bit.  A level that hits the iteration cap
is flagged and the run continues on the remaining levels.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ensemble import ParticleEnsemble, RbfKernel
from .svgd import IterationTrace, SvgdConfig, run_single_level
from .targets import TargetLevel

__all__ = ["LevelSchedule", "CostLedger", "RunReport", "run_mlsvgd", "cost_of_run"]


@dataclass(frozen=True)
class LevelSchedule:
    """Ordered level indices to visit; strictly increasing, nonempty."""

    levels: tuple[int, ...]

    def __init__(self, levels) -> None:
        object.__setattr__(self, "levels", tuple(int(l) for l in levels))
        if len(self.levels) == 0:
            raise ValueError("schedule must be nonempty")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError(f"schedule must be strictly increasing, got {self.levels}")

    @property
    def highest(self) -> int:
        return self.levels[-1]

    def __iter__(self):
        return iter(self.levels)

    def __len__(self) -> int:
        return len(self.levels)

    def tag(self) -> str:
        return "-".join(str(l) for l in self.levels)


@dataclass
class CostLedger:
    """Per-level evaluation counts and the cumulative weighted cost.

    ``cumulative_cost`` equals sum over levels of
    ``cost_weight * iterations * n_particles`` exactly.
    """

    levels: list[int] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    score_evaluations: list[int] = field(default_factory=list)
    cost_weights: list[float] = field(default_factory=list)
    n_particles: int = 0

    def add_segment(self, level: int, iterations: int, score_evaluations: int,
                    cost_weight: float, n_particles: int) -> None:
        if iterations < 0 or score_evaluations < 0:
            raise ValueError("counts must be nonnegative")
        self.levels.append(level)
        self.iterations.append(iterations)
        self.score_evaluations.append(score_evaluations)
        self.cost_weights.append(cost_weight)
        self.n_particles = n_particles

    @property
    def cumulative_cost(self) -> float:
        return float(sum(
            c * it * self.n_particles
            for c, it in zip(self.cost_weights, self.iterations)
        ))

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "iterations": self.iterations,
            "score_evaluations": self.score_evaluations,
            "cost_weights": self.cost_weights,
            "n_particles": self.n_particles,
            "cumulative_cost": self.cumulative_cost,
        }


@dataclass
class RunReport:
    """Everything a benchmark run produces."""

    final_ensemble: ParticleEnsemble
    trace: IterationTrace
    ledger: CostLedger
    schedule: LevelSchedule
    level_switch_iterations: list[int]
    tolerance_reached: list[bool]
    wall_seconds: float
    mean_history: np.ndarray  # (total_iterations, d)

    @property
    def flagged(self) -> bool:
        """True when any level segment stopped at the iteration cap."""
        return not all(self.tolerance_reached)

    def summary_dict(self) -> dict:
        return {
            "schedule": list(self.schedule.levels),
            "ledger": self.ledger.to_dict(),
            "level_switch_iterations": self.level_switch_iterations,
            "tolerance_reached": self.tolerance_reached,
            "flagged": self.flagged,
            "wall_seconds": self.wall_seconds,
            "total_iterations": len(self.trace),
            "final_mean": self.final_ensemble.mean().tolist(),
            "final_iteration": self.final_ensemble.iteration,
        }

    def save(self, directory: str | Path, *, extra: dict | None = None) -> None:
        """Write report JSON, trace CSV, and final-ensemble CSV into a directory.

        ``extra`` fields (config hash, seed, cost mode) are embedded in the
        report and stamped on the CSVs as provenance comments.
        """
        from .ensemble import save_ensemble

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        payload = self.summary_dict()
        if extra:
            payload.update(extra)
        tmp = directory / "report.json.tmp"
        tmp.write_text(json.dumps(payload, indent=2))
        tmp.replace(directory / "report.json")
        provenance = " ".join(f"{k}={extra[k]}" for k in sorted(extra)) if extra else None
        self.trace.to_csv(directory / "trace.csv", provenance=provenance)
        save_ensemble(self.final_ensemble, directory / "ensemble.csv",
                      extra_meta=extra)


def run_mlsvgd(
    initial: ParticleEnsemble,
    hierarchy: list[TargetLevel],
    schedule: LevelSchedule,
    kernel: RbfKernel,
    config: SvgdConfig,
    *,
    tolerances: list[float] | None = None,
) -> RunReport:
    """Run the level loop: each scheduled level starts from the previous
    level's final ensemble and iterates to tolerance.

    Levels not in the schedule are never evaluated.  The ledger accumulates
    iterations weighted by each level's cost weight.  ``tolerances``
    optionally overrides the stopping tolerance per scheduled level
    (default: the same tolerance everywhere).
    """
    by_level = {t.level: t for t in hierarchy}
    missing = [l for l in schedule if l not in by_level]
    if missing:
        raise ValueError(f"schedule levels {missing} not present in hierarchy")
    if tolerances is not None and len(tolerances) != len(schedule):
        raise ValueError("need one tolerance per scheduled level")

    t0 = time.perf_counter()
    trace = IterationTrace()
    ledger = CostLedger()
    switches: list[int] = []
    reached: list[bool] = []
    means: list[np.ndarray] = []

    current = initial
    cum_cost = 0.0
    for k, lvl in enumerate(schedule):
        target = by_level[lvl]
        if k > 0:
            switches.append(current.iteration)
        level_config = config if tolerances is None else SvgdConfig(
            step_size=config.step_size, tolerance=tolerances[k],
            max_iterations=config.max_iterations)
        result = run_single_level(
            current, target, kernel, level_config,
            cum_cost_start=cum_cost, wall_start=t0,
        )
        current = result.ensemble
        trace.extend(result.trace)
        means.append(result.mean_history)
        reached.append(result.tolerance_reached)
        ledger.add_segment(lvl, result.iterations, result.score_evaluations,
                           target.cost_weight, initial.count)
        cum_cost = trace.cum_cost[-1]

    return RunReport(
        final_ensemble=current,
        trace=trace,
        ledger=ledger,
        schedule=schedule,
        level_switch_iterations=switches,
        tolerance_reached=reached,
        wall_seconds=time.perf_counter() - t0,
        mean_history=np.concatenate(means, axis=0),
    )


def cost_of_run(ledger: CostLedger) -> float:
    """Model cost of a run: sum over levels of weight * iterations * N."""
    return ledger.cumulative_cost
