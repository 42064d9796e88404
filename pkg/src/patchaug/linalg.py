"""Symmetric eigendecomposition by cyclic Jacobi rotations, and the PSD square root.

The kernel is the classic cyclic-by-row Jacobi method: sweep the strict upper
triangle row by row, annihilating each off-diagonal element with a plane
rotation.  Only the upper triangle is kept current.  The first three sweeps skip
elements below ``0.2 · Σ|a_pq| / n²``; later sweeps flush elements that are
negligible next to both diagonal entries.  Diagonal updates are accumulated
separately within a sweep to limit round-off.
"""

from __future__ import annotations

import numba
import numpy as np

from .errors import NoConvergenceError, NotSymmetricError

MAX_SWEEPS = 50
SYMMETRY_TOL = 1e-8


@numba.njit(cache=True)
def _rotate_pair(a, i, j, k, l, s, tau):
    g = a[i, j]
    h = a[k, l]
    a[i, j] = g - s * (h + g * tau)
    a[k, l] = h + s * (g - h * tau)


@numba.njit(cache=True)
def _jacobi_kernel(a, vt, want_vectors, max_sweeps, tol):
    n = a.shape[0]
    d = np.empty(n)
    b = np.empty(n)
    z = np.zeros(n)
    total = 0.0
    for i in range(n):
        d[i] = a[i, i]
        b[i] = a[i, i]
        for j in range(n):
            total += a[i, j] * a[i, j]
    total = np.sqrt(total)

    for sweep in range(max_sweeps):
        sm = 0.0
        sq = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                sm += abs(a[p, q])
                sq += a[p, q] * a[p, q]
        if sm == 0.0 or np.sqrt(2.0 * sq) <= tol * total:
            return sweep, d
        thresh = 0.2 * sm / (n * n) if sweep < 3 else 0.0

        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                g = 100.0 * abs(apq)
                if sweep > 3 and abs(d[p]) + g == abs(d[p]) and abs(d[q]) + g == abs(d[q]):
                    a[p, q] = 0.0
                elif abs(apq) > thresh:
                    h = d[q] - d[p]
                    if abs(h) + g == abs(h):
                        t = apq / h
                    else:
                        theta = 0.5 * h / apq
                        t = 1.0 / (abs(theta) + np.sqrt(1.0 + theta * theta))
                        if theta < 0.0:
                            t = -t
                    c = 1.0 / np.sqrt(1.0 + t * t)
                    s = t * c
                    tau = s / (1.0 + c)
                    h = t * apq
                    z[p] -= h
                    z[q] += h
                    d[p] -= h
                    d[q] += h
                    a[p, q] = 0.0
                    for j in range(p):
                        _rotate_pair(a, j, p, j, q, s, tau)
                    for j in range(p + 1, q):
                        _rotate_pair(a, p, j, j, q, s, tau)
                    for j in range(q + 1, n):
                        _rotate_pair(a, p, j, q, j, s, tau)
                    if want_vectors:
                        for j in range(n):
                            _rotate_pair(vt, p, j, q, j, s, tau)
        for p in range(n):
            b[p] += z[p]
            d[p] = b[p]
            z[p] = 0.0
    return -1, d


def check_symmetric(a, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Validate symmetry (``max|A − Aᵀ| ≤ tol · max(1, max|A|)``) and return ``(A + Aᵀ)/2``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetricError(f"expected a square matrix, got shape {a.shape}")
    if a.size:
        scale = max(1.0, float(np.max(np.abs(a))))
        asym = float(np.max(np.abs(a - a.T)))
        if not np.isfinite(asym) or asym > tol * scale:
            raise NotSymmetricError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    return 0.5 * (a + a.T)


def jacobi_eigh(a, vectors: bool = True, tol: float = 1e-13, max_sweeps: int = MAX_SWEEPS):
    """Eigenvalues (and optionally eigenvectors, as columns) of a symmetric matrix.

    Stops when the off-diagonal Frobenius norm is at most ``tol · ‖A‖_F``;
    raises :class:`NoConvergenceError` if that takes more than ``max_sweeps``.
    Eigenvalues are returned in no particular order.
    """
    a = check_symmetric(a)
    n = a.shape[0]
    vt = np.eye(n)
    sweeps, w = _jacobi_kernel(a.copy(), vt, vectors, max_sweeps, tol)
    if sweeps < 0:
        raise NoConvergenceError(f"Jacobi eigensolver did not converge within {max_sweeps} sweeps")
    return (w, vt.T.copy()) if vectors else w


def sqrtm_psd(a) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix.

    Eigenvalues are clamped at 0 before the square root, so slightly
    indefinite inputs (round-off on singular covariances) are tolerated.
    """
    w, v = jacobi_eigh(a)
    s = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (s + s.T)


def trace_sqrtm_psd(a) -> float:
    """``trace(sqrtm_psd(a))``, from the eigenvalues alone."""
    w = jacobi_eigh(a, vectors=False)
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
