"""Dense linear algebra used throughout the package.

Thin wrappers over LAPACK (via numpy) that pin down the contracts the rest of
the code relies on: descending singular values, ascending eigenvalues,
relative rank tolerance and minimum-norm least squares.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class SymEigResult:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # orthonormal columns

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])


def _as_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericalFailure("matrix has non-finite entries")
    return M


def svd(M):
    """Thin SVD ``M = U diag(S) V^T`` with ``S`` sorted descending.

    Returns ``(U, S, V)``; note ``V`` (not ``V^T``).
    """
    M = _as_matrix(M)
    if M.size == 0:
        k = min(M.shape)
        return np.zeros((M.shape[0], k)), np.zeros(k), np.zeros((M.shape[1], k))
    try:
        U, S, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    return U, S, Vt.T


def rank(M, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    _, S, _ = svd(M)
    if S.size == 0 or S[0] == 0.0:
        return 0
    return int(np.count_nonzero(S > rel_tol * S[0]))


def spectral_norm(M) -> float:
    M = _as_matrix(M)
    if M.size == 0:
        return 0.0
    return float(svd(M)[1][0])


def sym_eig(M) -> SymEigResult:
    M = _as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"sym_eig needs a square matrix, got {M.shape}")
    M = 0.5 * (M + M.T)
    try:
        w, Q = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolver did not converge: {exc}") from exc
    return SymEigResult(w, Q)


def lstsq(A, b, rel_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Minimum-norm least-squares solution through the SVD pseudoinverse."""
    A = _as_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != b.shape[0]:
        raise ValueError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
    U, S, V = svd(A)
    if S.size == 0 or S[0] == 0.0:
        return np.zeros((A.shape[1],) + b.shape[1:])
    keep = S > rel_tol * S[0]
    coeffs = U[:, keep].T @ b
    coeffs = coeffs / (S[keep] if coeffs.ndim == 1 else S[keep][:, None])
    return V[:, keep] @ coeffs


def orth_complement(M, rel_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthonormal basis of ``{a : M^T a = 0}`` as columns.

    ``M`` has one row per ambient coordinate; its columns span the subspace.
    A result with zero columns means the columns of ``M`` span everything.
    """
    M = _as_matrix(M)
    d = M.shape[0]
    if M.shape[1] == 0:
        return np.eye(d)
    try:
        U, S, _ = np.linalg.svd(M, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    r = 0 if S[0] == 0.0 else int(np.count_nonzero(S > rel_tol * S[0]))
    return U[:, r:].copy()
