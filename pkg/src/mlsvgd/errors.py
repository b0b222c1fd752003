"""Shared exception types."""

from __future__ import annotations

import numpy as np


class ForwardSolveError(RuntimeError):
    """A PDE forward solve failed; carries the offending parameters."""

    def __init__(self, message: str, theta=None, level: int | None = None,
                 residual: float | None = None):
        super().__init__(message)
        self.theta = None if theta is None else np.asarray(theta)
        self.level = level
        self.residual = residual


class ConfigError(ValueError):
    """Invalid experiment configuration."""
