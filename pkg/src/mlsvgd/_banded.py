"""Batched direct solvers for small banded systems, compiled with numba.

Two storage schemes:

* SPD lower band, "wide" layout: ``band[j, k] = A[j+k, j]`` for
  ``k = 0..p`` in an array of shape ``(n + p, 2p + 2)``.  The extra
  columns stay zero and the extra rows are scratch, so the factorization
  inner loops run at a fixed trip count and vectorize.
* General band, row layout: ``band[i, k] = A[i, i + k - kl]`` for
  ``k = 0..kl+ku`` (LU without pivoting; fill stays inside the band).

Callers are expected to verify solutions with a residual check against
the assembled operator; these routines do not pivot.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

__all__ = [
    "spd_band_wide_alloc",
    "spd_band_solve_batch",
    "lu_band_solve_batch",
]


def spd_band_wide_alloc(n: int, p: int, batch: int) -> np.ndarray:
    """Scratch array for the wide SPD band layout, scratch diag set to 1."""
    band = np.zeros((batch, n + p, 2 * p + 2))
    band[:, n:, 0] = 1.0
    return band


@njit(cache=True, fastmath=True)
def _chol_factor_wide(L, n, p):
    """In-place Cholesky of the wide band layout. Returns 0 on success."""
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
    return 0


@njit(cache=True, fastmath=True)
def _chol_substitute_wide(L, b, x, n, p):
    """Solve L L^T x = b given the factored wide band; b is clobbered."""
    for j in range(n):
        v = b[j] / L[j, 0]
        x[j] = v
        kmax = min(p, n - 1 - j)
        for k in range(1, kmax + 1):
            b[j + k] -= L[j, k] * v
    for j in range(n - 1, -1, -1):
        kmax = min(p, n - 1 - j)
        s = x[j]
        for k in range(1, kmax + 1):
            s -= L[j, k] * x[j + k]
        x[j] = s / L[j, 0]


@njit(parallel=True, cache=True, fastmath=True)
def spd_band_solve_batch(bands, rhs, out, n, p):
    """Solve M independent SPD banded systems.

    Args:
        bands: ``(M, n+p, 2p+2)`` wide layout; clobbered by the factor.
        rhs: ``(M, n)``; clobbered.
        out: ``(M, n)`` output.
        n, p: System size and lower bandwidth.

    Returns:
        ``(M,)`` int array of status codes (0 = ok, j > 0 = pivot failure
        at column j-1).
    """
    m_batch = bands.shape[0]
    status = np.zeros(m_batch, dtype=np.int64)
    for i in prange(m_batch):
        st = _chol_factor_wide(bands[i], n, p)
        status[i] = st
        if st == 0:
            _chol_substitute_wide(bands[i], rhs[i], out[i], n, p)
    return status


@njit(cache=True, fastmath=True)
def _lu_band_factor_solve(band, b, x, n, kl, ku):
    """LU without pivoting on row-layout band; solves in place.

    Returns 0 on success, i+1 when a zero/non-finite pivot appears at row i.
    """
    for i in range(n):
        piv = band[i, kl]
        if piv == 0.0 or not np.isfinite(piv):
            return i + 1
        rmax = min(kl, n - 1 - i)
        for r in range(1, rmax + 1):
            mult = band[i + r, kl - r] / piv
            band[i + r, kl - r] = mult
            for c in range(1, ku + 1):
                band[i + r, kl - r + c] -= mult * band[i, kl + c]
            b[i + r] -= mult * b[i]
    for i in range(n - 1, -1, -1):
        s = b[i]
        cmax = min(ku, n - 1 - i)
        for c in range(1, cmax + 1):
            s -= band[i, kl + c] * x[i + c]
        x[i] = s / band[i, kl]
    return 0


@njit(parallel=True, cache=True, fastmath=True)
def lu_band_solve_batch(bands, rhs, out, n, kl, ku):
    """Solve M independent general banded systems (no pivoting).

    Args:
        bands: ``(M, n, kl+ku+1)`` row layout; clobbered.
        rhs: ``(M, n)``; clobbered.
        out: ``(M, n)`` output.

    Returns:
        ``(M,)`` status codes (0 = ok).
    """
    m_batch = bands.shape[0]
    status = np.zeros(m_batch, dtype=np.int64)
    for i in prange(m_batch):
        status[i] = _lu_band_factor_solve(bands[i], rhs[i], out[i], n, kl, ku)
    return status
