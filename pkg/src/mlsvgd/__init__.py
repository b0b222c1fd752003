"""Multilevel Stein variational gradient descent toolkit.

A finite-particle Stein update engine with an adaptive gradient-norm
stopping rule, a multilevel driver over hierarchies of target densities
with cost accounting, two PDE-based Bayesian inverse problems
(diffusion-reaction and Euler-Bernoulli beam), a delayed-rejection
adaptive Metropolis reference sampler, divergence utilities, and a CLI
benchmark harness.
"""

from .ensemble import (ParticleEnsemble, RbfKernel, init_ensemble,
                       kernel_eval, kernel_grad1, load_ensemble, save_ensemble)
from .errors import ConfigError, ForwardSolveError
from .multilevel import CostLedger, LevelSchedule, RunReport, cost_of_run, run_mlsvgd
from .svgd import (IterationTrace, SingleLevelResult, SvgdConfig, SvgdRunError,
                   gradient_norm_estimate, run_single_level, svgd_step)
from .targets import GaussianTargetLevel, TargetLevel, make_gaussian_hierarchy

__version__ = "0.1.0"

__all__ = [
    "ParticleEnsemble", "RbfKernel", "init_ensemble", "kernel_eval",
    "kernel_grad1", "save_ensemble", "load_ensemble",
    "SvgdConfig", "IterationTrace", "SingleLevelResult", "SvgdRunError",
    "svgd_step", "gradient_norm_estimate", "run_single_level",
    "LevelSchedule", "CostLedger", "RunReport", "run_mlsvgd", "cost_of_run",
    "TargetLevel", "GaussianTargetLevel", "make_gaussian_hierarchy",
    "ForwardSolveError", "ConfigError",
    "__version__",
]
