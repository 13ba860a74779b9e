"""Helpers for symmetric positive (semi)definite matrices.

Matrices are plain ``numpy.ndarray`` objects; these functions enforce and
repair the symmetric/PSD structure the filters and bounds rely on.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotSymmetric

SYMMETRY_TOL = 1e-8


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def asymmetry(M: np.ndarray) -> float:
    """Relative Frobenius asymmetry ``||M - M^T|| / ||M||`` (0 for M = 0)."""
    M = np.asarray(M, dtype=float)
    norm = np.linalg.norm(M)
    if norm == 0.0:
        return 0.0
    return float(np.linalg.norm(M - M.T) / norm)


def check_symmetric(M: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    if asymmetry(M) > tol:
        raise NotSymmetric(f"relative asymmetry {asymmetry(M):.3e} exceeds {tol:.0e}")
    return M


def sym_eigh(M: np.ndarray, tol: float = SYMMETRY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""
    M = check_symmetric(M, tol)
    return np.linalg.eigh(symmetrize(M))


def spd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix.

    Negative eigenvalues (roundoff on near-singular inputs) are clamped to
    zero before taking the root.

    Raises
    ------
    NotSymmetric
        If ``||M - M^T|| / ||M|| > 1e-8``.
    """
    w, U = sym_eigh(M)
    root = np.sqrt(np.clip(w, 0.0, None))
    return symmetrize((U * root) @ U.T)


def matrix_function(M: np.ndarray, fn) -> np.ndarray:
    """Apply a scalar function to the spectrum of a symmetric matrix."""
    w, U = sym_eigh(M)
    return symmetrize((U * fn(w)) @ U.T)


def min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(np.asarray(M, dtype=float)))[0])


def is_psd(M: np.ndarray, tol: float = 1e-10) -> bool:
    M = np.asarray(M, dtype=float)
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    return min_eig(M) >= -tol * scale


def loewner_leq(A: np.ndarray, B: np.ndarray, tol: float = 1e-10) -> bool:
    """True when ``A <= B`` in the Loewner order, up to ``tol`` (relative)."""
    return is_psd(np.asarray(B) - np.asarray(A), tol)


def clamp_psd(M: np.ndarray) -> tuple[np.ndarray, float]:
    """Clamp slightly negative eigenvalues to zero.

    Returns the repaired matrix and the most negative eigenvalue seen. The
    caller decides whether that eigenvalue is roundoff or a real failure.
    """
    w, U = np.linalg.eigh(symmetrize(M))
    lowest = float(w[0])
    if lowest >= 0.0:
        return symmetrize(M), lowest
    w = np.where(w < 0.0, 0.0, w)
    return symmetrize((U * w) @ U.T), lowest


def mean_diag(M: np.ndarray) -> float:
    """Mean of the diagonal entries, the scalar reduction used throughout."""
    return float(np.mean(np.diag(M)))
