"""Euler-Bernoulli cantilever forward model.

Solves (E(x) u'')'' = f on (0, 1) with clamped left end (u(0) = 0,
u'(0) = 0) and free right end (u''(1) = 0, u'''(1) = 0).  The stiffness
is a smoothed piecewise-constant field with one parameter per plateau:

    E_hat(x) = theta_1 + sum_{i=2}^{d} (theta_i - theta_{i-1}) * I(x, a_i),
    I(x, a) = 1 / (1 + exp(-(x - a) / 0.005)),

with knots a_1..a_{d+1} equidistant in [0, 1].  Discretization is the
second-order composite stencil

    (1/h^4) [ E_{i-1} u_{i-2} - 2(E_{i-1}+E_i) u_{i-1}
              + (E_{i-1}+4E_i+E_{i+1}) u_i - 2(E_i+E_{i+1}) u_{i+1}
              + E_{i+1} u_{i+2} ] = f_i,

with the free-end ghost values eliminated through the discrete
u''(1) = 0 and u'''(1) = 0 conditions, giving a pentadiagonal system
solved by a direct banded factorization.  Level l uses 50*l + 1 nodes.

The load is the constant 1, which keeps the constant-stiffness solution
in closed form: u(x) = x^2 (6 - 4x + x^2) / (24 E).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._banded import lu_band_solve_batch
from .errors import ForwardSolveError

__all__ = [
    "StiffnessField",
    "BeamGrid",
    "make_beam_grid",
    "smooth_stiffness",
    "piecewise_stiffness",
    "solve_beam",
    "solve_beam_batch",
    "beam_residual_system",
    "observe_beam",
    "generate_beam_data",
    "cantilever_uniform_load_deflection",
]

SMOOTHING_WIDTH = 0.005


@dataclass(frozen=True)
class StiffnessField:
    """Smoothed piecewise-constant stiffness with positive plateau values."""

    theta: np.ndarray
    smoothing: float = SMOOTHING_WIDTH

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if np.any(self.theta <= 0):
            raise ValueError("stiffness parameters must be positive")

    @property
    def dim(self) -> int:
        return self.theta.size

    @property
    def knots(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.dim + 1)


@dataclass(frozen=True)
class BeamGrid:
    """Level-indexed grid with 50*level + 1 nodes on [0, 1]."""

    level: int
    n_nodes: int
    h: float
    nodes: np.ndarray
    load: np.ndarray  # f at nodes; constant 1 by default


def make_beam_grid(level: int, *, n_nodes: int | None = None) -> BeamGrid:
    """Grid for a level; pass ``n_nodes`` to override (data generation)."""
    if n_nodes is None:
        if level < 1:
            raise ValueError("level must be >= 1")
        n_nodes = 50 * level + 1
    if n_nodes < 5:
        raise ValueError("need at least 5 nodes for the stencil")
    nodes = np.linspace(0.0, 1.0, n_nodes)
    h = 1.0 / (n_nodes - 1)
    return BeamGrid(level=level, n_nodes=n_nodes, h=h, nodes=nodes,
                    load=np.ones(n_nodes))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def smooth_stiffness(field: StiffnessField, x) -> np.ndarray | float:
    """Evaluate the sum-of-sigmoids stiffness at x (scalar or array)."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    theta = field.theta
    val = np.full_like(x_arr, theta[0])
    knots = field.knots
    for i in range(1, field.dim):
        val += (theta[i] - theta[i - 1]) * _sigmoid((x_arr - knots[i]) / field.smoothing)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(val[0])
    return val


def piecewise_stiffness(theta: np.ndarray, x) -> np.ndarray | float:
    """Raw piecewise-constant stiffness sum theta_i 1(a_i, a_{i+1}].

    Values at x = 0 take the first plateau; values beyond 1 the last.
    Used to generate synthetic data without the smoothing.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    d = theta.size
    knots = np.linspace(0.0, 1.0, d + 1)
    idx = np.searchsorted(knots, x_arr, side="left") - 1
    idx = np.clip(idx, 0, d - 1)
    val = theta[idx]
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(val[0])
    return val


def _assemble_beam_system(grid: BeamGrid, e_nodes: np.ndarray,
                          e_ghost: float) -> tuple[np.ndarray, np.ndarray]:
    """Pentadiagonal row-layout band (n, 5) and right-hand side.

    Row i holds [A[i,i-2], A[i,i-1], A[i,i], A[i,i+1], A[i,i+2]].
    PDE rows are scaled by h^4.
    """
    n = grid.n_nodes
    h4 = grid.h**4
    band = np.zeros((n, 5))
    rhs = np.zeros(n)
    e = e_nodes
    # clamped end: u_0 = 0 and one-sided u'(0) = 0
    band[0, 2] = 1.0
    band[1, 1] = -3.0
    band[1, 2] = 4.0
    band[1, 3] = -1.0
    # interior stencil rows
    i = np.arange(2, n - 2)
    band[i, 0] = e[i - 1]
    band[i, 1] = -2.0 * (e[i - 1] + e[i])
    band[i, 2] = e[i - 1] + 4.0 * e[i] + e[i + 1]
    band[i, 3] = -2.0 * (e[i] + e[i + 1])
    band[i, 4] = e[i + 1]
    rhs[i] = h4 * grid.load[i]
    # row n-2: ghost u_n eliminated via u''(1) = 0
    band[n - 2, 0] = e[n - 3]
    band[n - 2, 1] = -2.0 * (e[n - 3] + e[n - 2])
    band[n - 2, 2] = e[n - 3] + 4.0 * e[n - 2]
    band[n - 2, 3] = -2.0 * e[n - 2]
    rhs[n - 2] = h4 * grid.load[n - 2]
    # row n-1: ghosts eliminated via u''(1) = 0 and u'''(1) = 0
    ce = e[n - 2] + e_ghost
    band[n - 1, 0] = ce
    band[n - 1, 1] = -2.0 * ce
    band[n - 1, 2] = ce
    rhs[n - 1] = h4 * grid.load[n - 1]
    return band, rhs


def beam_residual_system(grid: BeamGrid, field: StiffnessField,
                         u: np.ndarray) -> np.ndarray:
    """Residual of the assembled system via a dense numpy matvec.

    Independent of the banded factorization path; used as the solution
    certificate in tests.
    """
    e_nodes = np.asarray(smooth_stiffness(field, grid.nodes))
    e_ghost = float(smooth_stiffness(field, 1.0 + grid.h))
    band, rhs = _assemble_beam_system(grid, e_nodes, e_ghost)
    n = grid.n_nodes
    dense = np.zeros((n, n))
    for off in range(-2, 3):
        idx = np.arange(max(0, -off), min(n, n - off))
        dense[idx, idx + off] = band[idx, off + 2]
    return dense @ np.asarray(u, dtype=float) - rhs


def _sigmoid_table(grid: BeamGrid, dim: int, smoothing: float) -> np.ndarray:
    """Transition values at grid nodes plus the right ghost, (dim-1, n+1)."""
    knots = np.linspace(0.0, 1.0, dim + 1)
    xs = np.append(grid.nodes, 1.0 + grid.h)
    return np.stack([
        _sigmoid((xs - knots[i]) / smoothing) for i in range(1, dim)
    ]) if dim > 1 else np.zeros((0, xs.size))


def solve_beam_batch(grid: BeamGrid, thetas: np.ndarray,
                     *, smoothing: float = SMOOTHING_WIDTH) -> np.ndarray:
    """Solve the beam for a batch of stiffness parameter vectors.

    Args:
        grid: Discretization.
        thetas: Parameters, shape ``(M, d)``, all positive.

    Returns:
        Displacements, shape ``(M, n_nodes)``.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if np.any(thetas <= 0) or not np.all(np.isfinite(thetas)):
        bad = int(np.argmax(~(np.all(np.isfinite(thetas), axis=1) & np.all(thetas > 0, axis=1))))
        raise ForwardSolveError("nonpositive or non-finite stiffness parameters",
                                theta=thetas[bad], level=grid.level)
    m_batch, dim = thetas.shape
    n = grid.n_nodes
    # stiffness at all nodes (and ghost) for the whole batch in one matmul
    table = _sigmoid_table(grid, dim, smoothing)
    e_all = thetas[:, :1] + np.diff(thetas, axis=1) @ table  # (M, n+1)
    e = e_all[:, :n]
    e_ghost = e_all[:, n]
    h4 = grid.h**4
    bands = np.zeros((m_batch, n, 5))
    rhs = np.zeros((m_batch, n))
    bands[:, 0, 2] = 1.0
    bands[:, 1, 1] = -3.0
    bands[:, 1, 2] = 4.0
    bands[:, 1, 3] = -1.0
    em1 = e[:, 1:n - 3]
    e0 = e[:, 2:n - 2]
    ep1 = e[:, 3:n - 1]
    bands[:, 2:n - 2, 0] = em1
    bands[:, 2:n - 2, 1] = -2.0 * (em1 + e0)
    bands[:, 2:n - 2, 2] = em1 + 4.0 * e0 + ep1
    bands[:, 2:n - 2, 3] = -2.0 * (e0 + ep1)
    bands[:, 2:n - 2, 4] = ep1
    rhs[:, 2:n - 2] = h4 * grid.load[2:n - 2]
    bands[:, n - 2, 0] = e[:, n - 3]
    bands[:, n - 2, 1] = -2.0 * (e[:, n - 3] + e[:, n - 2])
    bands[:, n - 2, 2] = e[:, n - 3] + 4.0 * e[:, n - 2]
    bands[:, n - 2, 3] = -2.0 * e[:, n - 2]
    rhs[:, n - 2] = h4 * grid.load[n - 2]
    ce = e[:, n - 2] + e_ghost
    bands[:, n - 1, 0] = ce
    bands[:, n - 1, 1] = -2.0 * ce
    bands[:, n - 1, 2] = ce
    rhs[:, n - 1] = h4 * grid.load[n - 1]
    out = np.empty((m_batch, n))
    status = lu_band_solve_batch(bands, rhs, out, n, 2, 2)
    if np.any(status != 0):
        i = int(np.argmax(status != 0))
        raise ForwardSolveError("singular beam system", theta=thetas[i],
                                level=grid.level)
    return out


def solve_beam(grid: BeamGrid, field: StiffnessField) -> np.ndarray:
    """Displacement field for one stiffness realization, shape (n_nodes,)."""
    sols = solve_beam_batch(grid, field.theta[None, :], smoothing=field.smoothing)
    return sols[0]


def save_displacement_csv(u: np.ndarray, grid: BeamGrid, path) -> None:
    """Dump a displacement field as (x, u) rows."""
    rows = np.column_stack([grid.nodes, np.asarray(u, dtype=float)])
    np.savetxt(path, rows, delimiter=",",
               header=f"# level={grid.level} nodes={grid.n_nodes}\nx,u",
               comments="")


def observe_beam(u: np.ndarray, grid: BeamGrid) -> np.ndarray:
    """Linear interpolation of the displacement at the 41 points j/40."""
    pts = np.linspace(0.0, 1.0, 41)
    return np.interp(pts, grid.nodes, np.asarray(u, dtype=float))


def cantilever_uniform_load_deflection(x: np.ndarray, e0: float,
                                       q: float = 1.0) -> np.ndarray:
    """Closed-form deflection for constant stiffness and uniform load."""
    x = np.asarray(x, dtype=float)
    return q * x**2 * (6.0 - 4.0 * x + x**2) / (24.0 * e0)


def generate_beam_data(
    dim: int,
    *,
    prior_mu: float = 1.0,
    prior_sigma: float = 0.05,
    noise_fraction: float = 1e-4,
    seed: int = 31415,
    n_nodes: int = 1001,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Synthesize beam observations on a grid finer than any level.

    The ground-truth stiffness is the raw piecewise-constant field with
    plateau values drawn once from the log-normal prior (seeded); solving
    with the unsmoothed truth on a fine grid avoids the inverse crime.
    Noise std is ``noise_fraction * max_j |y_j|``.

    Returns:
        ``(y, noise_std, theta_true)``.
    """
    rng = np.random.default_rng(seed)
    theta_true = np.exp(prior_mu + prior_sigma * rng.standard_normal(dim))
    grid = make_beam_grid(0, n_nodes=n_nodes)
    e_nodes = np.asarray(piecewise_stiffness(theta_true, grid.nodes))
    e_ghost = float(theta_true[-1])
    band, rhs = _assemble_beam_system(grid, e_nodes, e_ghost)
    out = np.empty((1, grid.n_nodes))
    status = lu_band_solve_batch(band[None, :, :].copy(), rhs[None, :].copy(),
                                 out, grid.n_nodes, 2, 2)
    if status[0] != 0:
        raise ForwardSolveError("singular system for ground-truth stiffness",
                                theta=theta_true)
    clean = observe_beam(out[0], grid)
    noise_std = noise_fraction * float(np.max(np.abs(clean)))
    y = clean + noise_std * rng.standard_normal(clean.size)
    return y, noise_std, theta_true
