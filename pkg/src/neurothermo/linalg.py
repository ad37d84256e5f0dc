"""Dense symmetric eigensolver based on cyclic Jacobi rotations.

Rotations are applied in round-robin (tournament) order so that each round
touches ``N // 2`` disjoint index pairs at once; this keeps the sweep fully
vectorised in numpy while remaining a plain cyclic Jacobi method.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYMMETRY_RTOL = 1e-10
OFF_DIAGONAL_RTOL = 1e-12
MAX_SWEEPS = 100


class StructuralError(ValueError):
    """Input matrix has the wrong shape or is not symmetric."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # column i pairs with eigenvalue i
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise StructuralError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise StructuralError("matrix has non-finite entries")
    return a


def check_symmetric(a: np.ndarray, rtol: float = SYMMETRY_RTOL) -> None:
    if a.shape[0] != a.shape[1]:
        raise StructuralError(f"matrix is not square: {a.shape}")
    scale = max(np.max(np.abs(a), initial=0.0), 1e-300)
    asym = np.max(np.abs(a - a.T), initial=0.0)
    if asym > rtol * scale:
        raise StructuralError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings of a round-robin tournament; every (p, q) appears once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        half = m // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        keep = (p < n) & (q < n)
        p, q = p[keep], q[keep]
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def sym_eig(a, max_sweeps: int = MAX_SWEEPS) -> EigenDecomposition:
    """Eigen-decompose a real symmetric matrix.

    Returns eigenvalues sorted in non-increasing order with the matching
    orthonormal eigenvectors as columns.
    """
    a = as_matrix(a)
    check_symmetric(a)
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n == 0:
        return EigenDecomposition(np.zeros(0), v, 0)

    # work on a unit-scale copy so squared entries neither underflow nor overflow
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return EigenDecomposition(np.zeros(n), v, 0)
    a = a / scale
    threshold = OFF_DIAGONAL_RTOL * np.linalg.norm(a)
    rounds = _round_robin(n)
    sweeps = 0
    off = _off_norm(a)
    while off > threshold:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", off * scale)
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            app, aqq = a[p, p], a[q, q]
            with np.errstate(over="ignore"):  # subnormal apq: theta = inf gives t = 0, pivot just zeroed
                theta = (aqq - app) / (2.0 * apq)
            big = np.abs(theta) > 1e150
            theta_safe = np.where(big, 1.0, theta)
            t = np.sign(theta_safe) / (np.abs(theta_safe) + np.sqrt(theta_safe * theta_safe + 1.0))
            # theta -> inf: t ~ 1 / (2 theta)
            t[big] = 0.5 / theta[big]
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            # columns then rows: A <- J^T A J with disjoint (p, q) pairs
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0

            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        sweeps += 1
        off = _off_norm(a)

    w = np.diag(a) * scale
    order = np.argsort(-w, kind="stable")
    return EigenDecomposition(w[order], v[:, order], sweeps)


def log_det_lu(a) -> tuple[float, float]:
    """(sign, log|det|) via LU factorisation; used as an independent check."""
    import scipy.linalg

    a = as_matrix(a)
    lu, piv = scipy.linalg.lu_factor(a)
    d = np.diag(lu)
    sign = np.prod(np.sign(d)) * (-1.0) ** np.sum(piv != np.arange(len(piv)))
    return float(sign), float(np.sum(np.log(np.abs(d))))
