"""Small shared linear-algebra helpers (rank decisions, guarded solves, PSD checks)."""

from __future__ import annotations

import numpy as np

# Relative singular-value cutoffs used throughout the package.
SVD_RANK_RTOL = 1e-8      # rank decisions (pencils, feasibility checks)
PINV_RTOL = 1e-10         # pseudo-inverse truncation
COND_LIMIT = 1e12         # refuse to invert anything worse than this


class NumericsError(RuntimeError):
    """An inversion or factorization was rejected on conditioning grounds."""


def sym(mat: np.ndarray) -> np.ndarray:
    """Symmetrize a square matrix."""
    return 0.5 * (mat + mat.T)


def matrix_rank(mat: np.ndarray, rtol: float = SVD_RANK_RTOL) -> int:
    """Rank with a relative singular-value threshold; empty matrices have rank 0."""
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def pinv_trunc(mat: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """SVD pseudo-inverse with relative truncation; empty-safe."""
    if mat.size == 0:
        return np.zeros((mat.shape[1], mat.shape[0]))
    return np.linalg.pinv(mat, rcond=rtol)


def solve_checked(mat: np.ndarray, rhs: np.ndarray, name: str) -> np.ndarray:
    """Solve mat @ x = rhs, rejecting ill-conditioned systems with a diagnostic.

    Empty systems (0x0) return an empty solution, matching the convention that
    operations with empty matrices are identities of the appropriate shape.
    """
    if mat.shape[0] == 0:
        return np.zeros(rhs.shape[1:]) if rhs.ndim > 1 else np.zeros(0)
    s = np.linalg.svd(mat, compute_uv=False)
    if s[-1] == 0.0 or s[0] / s[-1] > COND_LIMIT:
        raise NumericsError(
            f"{name} is singular or ill-conditioned "
            f"(cond ~ {np.inf if s[-1] == 0 else s[0] / s[-1]:.3e})"
        )
    return np.linalg.solve(mat, rhs)


def inv_checked(mat: np.ndarray, name: str) -> np.ndarray:
    """Inverse with the same conditioning guard as :func:`solve_checked`."""
    if mat.shape[0] == 0:
        return mat.copy()
    return solve_checked(mat, np.eye(mat.shape[0]), name)


def assert_psd(mat: np.ndarray, name: str, tol_scale: float = 1e-8) -> np.ndarray:
    """Symmetrize and verify min eigenvalue >= -tol_scale * trace; return the result."""
    out = sym(mat)
    if out.size == 0:
        return out
    floor = -tol_scale * max(np.trace(out), 1.0e-30)
    lam_min = float(np.linalg.eigvalsh(out)[0])
    if lam_min < floor:
        raise NumericsError(f"{name} lost positive semidefiniteness (lambda_min={lam_min:.3e})")
    return out


def is_symmetric(mat: np.ndarray, tol: float = 1e-10) -> bool:
    if mat.shape[0] != mat.shape[1]:
        return False
    if mat.size == 0:
        return True
    scale = max(1.0, float(np.abs(mat).max()))
    return bool(np.abs(mat - mat.T).max() <= tol * scale)


def psd_factor(mat: np.ndarray, tol_scale: float = 1e-10) -> np.ndarray:
    """Factor L of a PSD matrix with mat = L @ L.T, tolerating tiny negative eigenvalues."""
    if mat.size == 0:
        return mat.copy()
    lam, vec = np.linalg.eigh(sym(mat))
    floor = tol_scale * max(abs(lam[-1]), 1e-30)
    if lam[0] < -1e-8 * max(abs(lam[-1]), 1.0):
        raise NumericsError(f"matrix is not PSD (lambda_min={lam[0]:.3e})")
    lam = np.clip(lam, 0.0, None)
    keep = lam > floor
    return vec[:, keep] * np.sqrt(lam[keep])


def spectral_radius(mat: np.ndarray) -> float:
    if mat.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(mat))))
