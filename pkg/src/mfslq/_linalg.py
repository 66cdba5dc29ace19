"""Small dense linear-algebra helpers shared by the solvers."""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve

INV_TOL = 1e-10


class FactorizationError(ArithmeticError):
    """Raised when a matrix that should be positive definite is not."""

    def __init__(self, message, time=None, matrix=None):
        super().__init__(message if time is None else f"{message} at s={time:.6g}")
        self.time = time
        self.matrix = matrix


def sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def spd_solve(K, rhs, inv_tol=INV_TOL, time=None):
    """Solve ``K x = rhs`` for symmetric positive definite ``K``.

    A Cholesky factorization is used; the smallest pivot (squared diagonal
    of the factor) must exceed ``inv_tol``.
    """
    if K.shape[0] == 1:
        k = K[0, 0]
        if not k >= inv_tol:
            raise FactorizationError(f"control weight not positive definite (pivot {k:.3e})", time, K)
        return rhs / k
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise FactorizationError("control weight not positive definite", time, K) from None
    pivot = float(np.min(np.diag(L))) ** 2
    if pivot < inv_tol:
        raise FactorizationError(f"control weight nearly singular (pivot {pivot:.3e})", time, K)
    return cho_solve((L, True), rhs, check_finite=False)


def min_eig(M) -> float:
    """Smallest eigenvalue over a stack of symmetric matrices."""
    return float(np.linalg.eigvalsh(sym(np.asarray(M))).min())


def spectral_norm(M):
    """Spectral norm of each matrix in a stack."""
    return np.linalg.norm(M, ord=2, axis=(-2, -1))


def sqrtm_psd(S):
    """Symmetric square root of a positive semidefinite matrix."""
    w, V = np.linalg.eigh(sym(np.atleast_2d(S)))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
