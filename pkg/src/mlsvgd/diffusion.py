"""2D nonlinear diffusion-reaction forward model.

Solves -laplace(u) + g(u, theta) = 100 sin(2 pi x1) sin(2 pi x2) on the
unit square with homogeneous Dirichlet boundary, where the reaction term
is

    g(u, theta) = (0.1 sin(theta1) + 2) exp(-2.7 theta1^2)
                  * (exp(1.8 theta2 u) - 1).

Discretization: 5-point Laplacian on an equidistant grid with mesh width
2**(-level-2).  The nonlinear system is solved by Newton's method with an
Armijo backtracking line search; the linear solves use a direct banded
Cholesky factorization of the Jacobian (bandwidth = one grid side).
Observations are bilinear interpolations of the solution at the 12 points
(0.25 i, 0.2 j), i in 1..3, j in 1..4, ordered i-major.

The batch entry point solves many parameter vectors at once (numba
parallel) and accepts warm starts, which the Bayesian layer uses to make
repeated score evaluations cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import get_num_threads, get_thread_id, njit, prange

from .errors import ForwardSolveError

__all__ = [
    "DrGrid",
    "NewtonConfig",
    "make_dr_grid",
    "reaction",
    "solve_dr",
    "solve_dr_batch",
    "dr_residual",
    "observe_dr",
    "observation_points",
    "generate_dr_data",
    "DR_THETA_STAR",
]

# exp() arguments beyond this are treated as overflow of the reaction term
_EXP_CLAMP = 700.0

DR_THETA_STAR = np.array([-np.pi / 4.0, 3.0])


@dataclass(frozen=True)
class NewtonConfig:
    """Newton/Armijo parameters for the nonlinear solve."""

    tolerance: float = 1e-10
    max_iterations: int = 50
    armijo_constant: float = 1e-4
    backtrack_factor: float = 0.5

    def __post_init__(self) -> None:
        if not (self.tolerance > 0):
            raise ValueError("tolerance must be positive")
        if not (0 < self.armijo_constant < 1 and 0 < self.backtrack_factor < 1):
            raise ValueError("Armijo constant and backtrack factor must be in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class DrGrid:
    """Level-indexed grid: mesh width 2**(-level-2), interior nodes only."""

    level: int
    h: float
    m: int  # interior nodes per side
    forcing: np.ndarray  # (m*m,), 100 sin(2 pi x1) sin(2 pi x2) at nodes

    @property
    def n(self) -> int:
        return self.m * self.m


def make_dr_grid(level: int) -> DrGrid:
    if level < 1:
        raise ValueError("level must be >= 1")
    h = 2.0 ** (-(level + 2))
    m = round(1.0 / h) - 1
    x = (np.arange(1, m + 1)) * h
    sx = np.sin(2.0 * np.pi * x)
    forcing = 100.0 * np.outer(sx, sx)  # [row=x2, col=x1]; symmetric either way
    return DrGrid(level=level, h=h, m=m, forcing=forcing.ravel())


def reaction(u, theta) -> tuple[np.ndarray, np.ndarray]:
    """Reaction term and its u-derivative; broadcasts over u.

    Returns ``(g, dg_du)`` with
    g = amp * (exp(1.8 theta2 u) - 1), dg_du = amp * 1.8 theta2 * exp(1.8 theta2 u),
    amp = (0.1 sin(theta1) + 2) exp(-2.7 theta1^2).
    """
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(theta))):
        raise ValueError("reaction inputs must be finite")
    amp = (0.1 * np.sin(theta[0]) + 2.0) * np.exp(-2.7 * theta[0] ** 2)
    b = 1.8 * theta[1]
    arg = b * u
    if np.any(np.abs(arg) > _EXP_CLAMP):
        raise ForwardSolveError(
            f"reaction exponent overflow (max |1.8 theta2 u| = {np.max(np.abs(arg)):.3g})",
            theta=theta,
        )
    e = np.exp(arg)
    return amp * (e - 1.0), amp * b * e


@njit(cache=True, fastmath=True)
def _dr_residual_kernel(u, amp, b, f, m, h2inv, res):
    """res = A u + g(u) - f; returns (inf_norm, sq_norm, clamped_flag)."""
    n = m * m
    clamped = False
    for r in range(m):
        for k in range(m):
            j = r * m + k
            au = 4.0 * u[j]
            if k > 0:
                au -= u[j - 1]
            if k < m - 1:
                au -= u[j + 1]
            if r > 0:
                au -= u[j - m]
            if r < m - 1:
                au -= u[j + m]
            arg = b * u[j]
            if arg > _EXP_CLAMP:
                arg = _EXP_CLAMP
                clamped = True
            elif arg < -_EXP_CLAMP:
                arg = -_EXP_CLAMP
                clamped = True
            res[j] = au * h2inv + amp * (np.exp(arg) - 1.0) - f[j]
    inf = 0.0
    sq = 0.0
    for j in range(n):
        a = abs(res[j])
        if a > inf:
            inf = a
        sq += res[j] * res[j]
    return inf, sq, clamped


@njit(cache=True, fastmath=True)
def _chol_factor_solve_wide(L, b, x, n, p):
    """Factor the wide band in place and solve L L^T x = b.

    The forward substitution is fused into the factorization sweep (each
    column is final when visited), so L is streamed twice total instead
    of three times; b is clobbered.
    """
    w = p + 1
    for j in range(n):
        d = L[j, 0]
        if d <= 0.0 or not np.isfinite(d):
            return j + 1
        ljj = np.sqrt(d)
        inv = 1.0 / ljj
        L[j, 0] = ljj
        for k in range(1, w):
            L[j, k] *= inv
        for bb in range(1, w):
            lb = L[j, bb]
            if lb != 0.0:
                tgt = j + bb
                for idx in range(w):
                    L[tgt, idx] -= L[j, idx + bb] * lb
        v = b[j] * inv
        b[j] = v
        kmax = min(p, n - 1 - j)
        for k in range(1, kmax + 1):
            b[j + k] -= L[j, k] * v
    for j in range(n - 1, -1, -1):
        kmax = min(p, n - 1 - j)
        s = b[j]
        for k in range(1, kmax + 1):
            s -= L[j, k] * x[j + k]
        x[j] = s / L[j, 0]
    return 0


@njit(cache=True, fastmath=True)
def _dr_newton_one(theta1, theta2, u, f, m, h2inv, disable_reaction,
                   tol, max_iter, armijo_c, backtrack,
                   band, res, delta, rhs, utrial):
    """Newton with Armijo backtracking for one parameter vector.

    u is the warm start on entry and the solution on exit; band/res/delta/
    rhs/utrial are caller-provided workspaces (per-thread in the batch
    driver, so no allocation happens inside the hot loop).
    Returns (iterations, final_inf_norm, status):
    status 0 = converged, 1 = max iterations, 2 = reaction overflow,
    3 = line search failed, 4 = factorization failed.
    """
    n = m * m
    p = m
    if disable_reaction:
        amp = 0.0
        b = 0.0
    else:
        amp = (0.1 * np.sin(theta1) + 2.0) * np.exp(-2.7 * theta1 * theta1)
        b = 1.8 * theta2

    inf0, sq0, clamped = _dr_residual_kernel(u, amp, b, f, m, h2inv, res)
    if inf0 <= tol:
        if clamped:
            return 0, inf0, 2
        return 0, inf0, 0

    for it in range(1, max_iter + 1):
        # Jacobian band: diag 4/h^2 + g'(u); x/y neighbors -1/h^2.
        # Columns p+1..2p+1 are never written by the factorization and
        # stay zero from workspace creation; only the lower half needs
        # resetting between Newton iterations.
        for j in range(n + p):
            for k in range(p + 1):
                band[j, k] = 0.0
        for j in range(n, n + p):
            band[j, 0] = 1.0
        for r in range(m):
            for k in range(m):
                j = r * m + k
                arg = b * u[j]
                if arg > _EXP_CLAMP:
                    arg = _EXP_CLAMP
                elif arg < -_EXP_CLAMP:
                    arg = -_EXP_CLAMP
                band[j, 0] = 4.0 * h2inv + amp * b * np.exp(arg)
                if k < m - 1:
                    band[j, 1] = -h2inv
                if r < m - 1:
                    band[j, p] = -h2inv
        for j in range(n):
            rhs[j] = -res[j]
        st = _chol_factor_solve_wide(band, rhs, delta, n, p)
        if st != 0:
            # indefinite Jacobian (strongly negative reaction slope):
            # shift the diagonal until positive definite and take the
            # damped direction instead
            wmin = 0.0
            for j in range(n):
                arg = b * u[j]
                if arg > _EXP_CLAMP:
                    arg = _EXP_CLAMP
                elif arg < -_EXP_CLAMP:
                    arg = -_EXP_CLAMP
                gu = amp * b * np.exp(arg)
                if gu < wmin:
                    wmin = gu
            tau = -wmin + 1.0
            for j in range(n + p):
                for k in range(p + 1):
                    band[j, k] = 0.0
            for j in range(n, n + p):
                band[j, 0] = 1.0
            for r in range(m):
                for k in range(m):
                    j = r * m + k
                    arg = b * u[j]
                    if arg > _EXP_CLAMP:
                        arg = _EXP_CLAMP
                    elif arg < -_EXP_CLAMP:
                        arg = -_EXP_CLAMP
                    band[j, 0] = 4.0 * h2inv + amp * b * np.exp(arg) + tau
                    if k < m - 1:
                        band[j, 1] = -h2inv
                    if r < m - 1:
                        band[j, p] = -h2inv
            for j in range(n):
                rhs[j] = -res[j]
            st = _chol_factor_solve_wide(band, rhs, delta, n, p)
            if st != 0:
                return it, inf0, 4

        # Armijo on the squared residual norm: phi(u + t d) <= (1 - 2 c t) phi(u)
        t = 1.0
        accepted = False
        for _ in range(60):
            for j in range(n):
                utrial[j] = u[j] + t * delta[j]
            inf_t, sq_t, clamped = _dr_residual_kernel(
                utrial, amp, b, f, m, h2inv, res)
            if np.isfinite(sq_t) and sq_t <= (1.0 - 2.0 * armijo_c * t) * sq0:
                accepted = True
                break
            t *= backtrack
        if not accepted:
            return it, inf0, 3
        for j in range(n):
            u[j] = utrial[j]
        inf0 = inf_t
        sq0 = sq_t
        if clamped:
            return it, inf0, 2
        if inf0 <= tol:
            return it, inf0, 0
    return max_iter, inf0, 1


@njit(parallel=True, cache=True, fastmath=True)
def _dr_newton_batch(thetas, warm, f, m, h2inv, disable_reaction,
                     tol, max_iter, armijo_c, backtrack, bands, work):
    nbatch = thetas.shape[0]
    iters = np.zeros(nbatch, dtype=np.int64)
    resinf = np.zeros(nbatch)
    status = np.zeros(nbatch, dtype=np.int64)
    for i in prange(nbatch):
        tid = get_thread_id()
        it, rf, st = _dr_newton_one(
            thetas[i, 0], thetas[i, 1], warm[i], f, m, h2inv,
            disable_reaction, tol, max_iter, armijo_c, backtrack,
            bands[tid], work[tid, 0], work[tid, 1], work[tid, 2], work[tid, 3])
        iters[i] = it
        resinf[i] = rf
        status[i] = st
    return iters, resinf, status


_workspaces: dict = {}


def _get_workspaces(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-thread Newton workspaces, cached per grid size."""
    key = (m, get_num_threads())
    if key not in _workspaces:
        n, p = m * m, m
        nthreads = get_num_threads()
        _workspaces[key] = (
            np.zeros((nthreads, n + p, 2 * p + 2)),
            np.zeros((nthreads, 4, n)),
        )
    return _workspaces[key]


_STATUS_MESSAGES = {
    1: "Newton did not converge within the iteration cap",
    2: "reaction exponent overflow",
    3: "Armijo line search failed",
    4: "Jacobian factorization failed",
}


def _dense_jacobian(grid: DrGrid, u: np.ndarray, theta: np.ndarray,
                    disable_reaction: bool) -> np.ndarray:
    m, h2inv = grid.m, 1.0 / grid.h**2
    n = grid.n
    J = np.zeros((n, n))
    idx = np.arange(n)
    J[idx, idx] = 4.0 * h2inv
    if not disable_reaction:
        _, dg = reaction(u, theta)
        J[idx, idx] += dg
    k = idx % m
    right = idx[k < m - 1]
    J[right, right + 1] = -h2inv
    J[right + 1, right] = -h2inv
    up = idx[idx < n - m]
    J[up, up + m] = -h2inv
    J[up + m, up] = -h2inv
    return J


def _dr_newton_dense(grid: DrGrid, theta: np.ndarray, config: NewtonConfig,
                     u0: np.ndarray, disable_reaction: bool) -> np.ndarray:
    """Rescue solver for indefinite or slow cases: exact Newton directions
    from dense factorizations with the same Armijo rule."""
    u = u0.copy()
    res = dr_residual(grid, u, theta, disable_reaction=disable_reaction)
    sq0 = float(res @ res)
    for _ in range(2 * config.max_iterations):
        if np.max(np.abs(res)) <= config.tolerance:
            return u
        if np.max(np.abs(u)) > 50.0:
            # solutions of this problem are O(1); unbounded drift means the
            # reaction has no balancing solution at these parameters
            raise ForwardSolveError("solution drift; no balancing state",
                                    theta=theta, level=grid.level,
                                    residual=float(np.max(np.abs(res))))
        J = _dense_jacobian(grid, u, theta, disable_reaction)
        delta = np.linalg.solve(J, -res)
        t = 1.0
        for _ in range(60):
            trial = u + t * delta
            try:
                res_t = dr_residual(grid, trial, theta,
                                    disable_reaction=disable_reaction)
            except ForwardSolveError:
                res_t = None
            if res_t is not None:
                with np.errstate(over="ignore"):
                    sq_t = float(res_t @ res_t)
                if np.isfinite(sq_t) and sq_t <= (1.0 - 2.0 * config.armijo_constant * t) * sq0:
                    u, res, sq0 = trial, res_t, sq_t
                    break
            t *= config.backtrack_factor
        else:
            raise ForwardSolveError("line search failed", theta=theta,
                                    level=grid.level,
                                    residual=float(np.max(np.abs(res))))
    raise ForwardSolveError(
        "Newton did not converge within the iteration cap", theta=theta,
        level=grid.level, residual=float(np.max(np.abs(res))))


def solve_dr_batch(
    grid: DrGrid,
    thetas: np.ndarray,
    config: NewtonConfig = NewtonConfig(),
    *,
    warm: np.ndarray | None = None,
    disable_reaction: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the PDE for a batch of parameter vectors.

    Args:
        grid: Discretization level.
        thetas: Parameters, shape ``(M, 2)``.
        config: Newton parameters.
        warm: Optional warm-start solutions ``(M, n)``; clobbered with the
            result when given.
        disable_reaction: Drop the reaction term (test hook; equivalent to
            theta2 = 0).

    Returns:
        ``(solutions, newton_iterations)`` with solutions ``(M, n)``.

    Raises:
        ForwardSolveError: On any per-particle failure, carrying the first
            offending parameter vector.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[1] != 2:
        raise ValueError("thetas must have two columns")
    if not np.all(np.isfinite(thetas)):
        raise ForwardSolveError("non-finite parameters", theta=thetas, level=grid.level)
    if warm is None:
        warm = np.zeros((thetas.shape[0], grid.n))
    bands, work = _get_workspaces(grid.m)
    iters, resinf, status = _dr_newton_batch(
        thetas, warm, grid.forcing, grid.m, 1.0 / grid.h**2,
        disable_reaction, config.tolerance, config.max_iterations,
        config.armijo_constant, config.backtrack_factor, bands, work)
    failed = np.nonzero(status != 0)[0]
    for i in failed:
        # overflow stays an error; iteration-cap and line-search stalls in
        # the strongly indefinite region get the dense rescue path
        if status[i] == 2:
            raise ForwardSolveError(
                f"{_STATUS_MESSAGES[2]} (level {grid.level}, theta {thetas[i]})",
                theta=thetas[i], level=grid.level, residual=float(resinf[i]))
        warm[i] = _dr_newton_dense(grid, thetas[i], config,
                                   np.zeros(grid.n), disable_reaction)
        iters[i] = config.max_iterations
    return warm, iters


def solve_dr(
    grid: DrGrid,
    theta: np.ndarray,
    config: NewtonConfig = NewtonConfig(),
    *,
    u0: np.ndarray | None = None,
    disable_reaction: bool = False,
) -> np.ndarray:
    """Solve for one parameter vector; returns the interior field (m, m)."""
    theta = np.asarray(theta, dtype=float).ravel()
    warm = None if u0 is None else np.asarray(u0, dtype=float).reshape(1, grid.n).copy()
    solutions, _ = solve_dr_batch(grid, theta[None, :], config, warm=warm,
                                  disable_reaction=disable_reaction)
    return solutions[0].reshape(grid.m, grid.m)


def dr_residual(grid: DrGrid, u: np.ndarray, theta: np.ndarray,
                *, disable_reaction: bool = False) -> np.ndarray:
    """Residual A u + g(u) - f evaluated with plain numpy.

    Independent of the numba solve path; used as the certificate that
    returned solutions satisfy the discrete equations.
    """
    m = grid.m
    field = np.asarray(u, dtype=float).reshape(m, m)
    full = np.zeros((m + 2, m + 2))
    full[1:-1, 1:-1] = field
    lap = (4.0 * full[1:-1, 1:-1] - full[:-2, 1:-1] - full[2:, 1:-1]
           - full[1:-1, :-2] - full[1:-1, 2:]) / grid.h**2
    if disable_reaction:
        g = 0.0
    else:
        g, _ = reaction(field, theta)
    return (lap + g - grid.forcing.reshape(m, m)).ravel()


def save_field_csv(field: np.ndarray, grid: DrGrid, path) -> None:
    """Dump an interior solution field as an (m, m) CSV grid."""
    np.savetxt(path, np.asarray(field, dtype=float).reshape(grid.m, grid.m),
               delimiter=",",
               header=f"# level={grid.level} h={grid.h} interior side={grid.m}",
               comments="")


def observation_points() -> np.ndarray:
    """The 12 observation coordinates (0.25 i, 0.2 j), i-major."""
    pts = [(0.25 * i, 0.2 * j) for i in (1, 2, 3) for j in (1, 2, 3, 4)]
    return np.asarray(pts)


def observe_dr(field: np.ndarray, grid: DrGrid) -> np.ndarray:
    """Bilinear interpolation of the interior field at the 12 points."""
    m = grid.m
    field = np.asarray(field, dtype=float).reshape(m, m)
    full = np.zeros((m + 2, m + 2))
    full[1:-1, 1:-1] = field
    h = grid.h
    out = np.empty(12)
    for idx, (px, py) in enumerate(observation_points()):
        fx = px / h
        fy = py / h
        ix = min(int(fx), m)
        iy = min(int(fy), m)
        tx = fx - ix
        ty = fy - iy
        out[idx] = ((1 - ty) * ((1 - tx) * full[iy, ix] + tx * full[iy, ix + 1])
                    + ty * ((1 - tx) * full[iy + 1, ix] + tx * full[iy + 1, ix + 1]))
    return out


def generate_dr_data(
    theta_star: np.ndarray = DR_THETA_STAR,
    *,
    data_level: int = 4,
    noise_fraction: float = 0.005,
    seed: int = 90210,
    config: NewtonConfig = NewtonConfig(),
) -> tuple[np.ndarray, float]:
    """Synthesize observations on a finer grid than any inference level.

    The noise standard deviation is ``noise_fraction * max_i |G(theta*)_i|``
    i.i.d. per component.  Returns ``(y, noise_std)``.
    """
    grid = make_dr_grid(data_level)
    field = solve_dr(grid, theta_star, config)
    clean = observe_dr(field, grid)
    noise_std = noise_fraction * float(np.max(np.abs(clean)))
    rng = np.random.default_rng(seed)
    y = clean + noise_std * rng.standard_normal(clean.size)
    return y, noise_std
