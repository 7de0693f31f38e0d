"""Dense and iterative symmetric eigensolvers, SPD solves and soft-thresholding.

Matrices up to ``DENSE_MAX`` rows go through LAPACK's full symmetric
decomposition; larger ones (usually sparse graph Laplacians) are handled by
implicitly restarted Lanczos on the shifted operator ``sigma*I - A`` so that
the smallest eigenvalues of ``A`` become the largest of the operator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigInvalid, NoConvergence, NonFinite, NotPositiveDefinite, SingularMass

DENSE_MAX = 2048
LANCZOS_MAX_ITER = 5000
SYM_TOL = 1e-12


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual_bound: float

    @property
    def k(self) -> int:
        return len(self.eigenvalues)


def _max_abs(A) -> float:
    if sp.issparse(A):
        return float(abs(A).max()) if A.nnz else 0.0
    return float(np.max(np.abs(A))) if A.size else 0.0


def check_symmetric(A, tol: float = SYM_TOL):
    """Validate a square, finite, symmetric matrix (dense or sparse) and return it.

    The tolerance is relative to ``max(1, max|A_ij|)``.
    """
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigInvalid(f"expected a square matrix, got shape {A.shape}")
    if sp.issparse(A):
        A = sp.csr_matrix(A)
        if not np.all(np.isfinite(A.data)):
            raise NonFinite("matrix contains NaN or Inf")
        asym = _max_abs(A - A.T)
    else:
        A = np.asarray(A, dtype=float)
        if not np.all(np.isfinite(A)):
            raise NonFinite("matrix contains NaN or Inf")
        asym = 0.0
        # row blocks keep the temporary small for n in the thousands
        for start in range(0, A.shape[0], 512):
            blk = A[start:start + 512]
            asym = max(asym, float(np.max(np.abs(blk - A[:, start:start + 512].T))))
    if asym > tol * max(1.0, _max_abs(A)):
        raise ConfigInvalid(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    return A


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so that each column's largest-magnitude entry is positive.

    ``np.argmax`` returns the first maximiser, so ties go to the lowest index.
    """
    V = np.array(V, dtype=float, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _residuals(A, V, lam, B=None) -> np.ndarray:
    AV = A @ V
    BV = V if B is None else B[:, None] * V
    return np.linalg.norm(AV - BV * lam, axis=0)


def _lanczos_smallest(A, k: int, max_iter: int) -> tuple[np.ndarray, np.ndarray]:
    n = A.shape[0]
    shift = float(abs(A).sum(axis=1).max()) if sp.issparse(A) else float(np.abs(A).sum(axis=1).max())
    Ac = sp.csr_matrix(A) if sp.issparse(A) else A
    op = spla.LinearOperator((n, n), matvec=lambda x: shift * x - Ac @ x, dtype=float)
    v0 = np.random.default_rng(0).standard_normal(n)
    ncv = min(n, max(2 * k + 1, k + 32))
    try:
        mu, V = spla.eigsh(op, k=k, which="LA", v0=v0, ncv=ncv, maxiter=max_iter)
    except spla.ArpackNoConvergence as exc:
        raise NoConvergence(f"Lanczos did not converge within {max_iter} iterations") from exc
    lam = shift - mu
    order = np.argsort(lam, kind="stable")
    return lam[order], V[:, order]


def _lanczos_largest(A, k: int, max_iter: int) -> tuple[np.ndarray, np.ndarray]:
    n = A.shape[0]
    v0 = np.random.default_rng(0).standard_normal(n)
    ncv = min(n, max(2 * k + 1, k + 32))
    try:
        lam, V = spla.eigsh(A, k=k, which="LA", v0=v0, ncv=ncv, maxiter=max_iter)
    except spla.ArpackNoConvergence as exc:
        raise NoConvergence(f"Lanczos did not converge within {max_iter} iterations") from exc
    order = np.argsort(lam, kind="stable")
    return lam[order], V[:, order]


def eig_sym(A, k: int, which: str = "smallest", *, dense_max: int = DENSE_MAX,
            max_iter: int = LANCZOS_MAX_ITER) -> EigenSystem:
    """k eigenpairs from one end of the spectrum of a symmetric matrix.

    Eigenvalues are returned ascending in both modes. Eigenvectors are
    orthonormal and sign-normalised with :func:`fix_signs`.
    """
    A = check_symmetric(A)
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ConfigInvalid(f"k must lie in [1, {n}], got {k}")
    if which not in ("smallest", "largest"):
        raise ConfigInvalid(f"which must be 'smallest' or 'largest', got {which!r}")

    # ARPACK needs k < n; tiny or moderate problems take the dense route anyway
    if n <= dense_max or k >= n - 1:
        Ad = A.toarray() if sp.issparse(A) else A
        try:
            if which == "smallest":
                lam, V = sla.eigh(Ad, subset_by_index=[0, k - 1], driver="evr")
            else:
                lam, V = sla.eigh(Ad, subset_by_index=[n - k, n - 1], driver="evr")
        except np.linalg.LinAlgError as exc:
            raise NoConvergence(str(exc)) from exc
    elif which == "smallest":
        lam, V = _lanczos_smallest(A, k, max_iter)
    else:
        lam, V = _lanczos_largest(A, k, max_iter)

    V = fix_signs(V)
    res = _residuals(A, V, lam)
    bound = 1e-8 * (1.0 + _max_abs(A) * n)
    worst = float(res.max()) if res.size else 0.0
    if worst > bound:
        raise NoConvergence(f"eigen residual {worst:.3e} exceeds bound {bound:.3e}")
    return EigenSystem(np.asarray(lam, dtype=float), V, worst)


def eig_generalized(A, B, k: int, **kwargs) -> EigenSystem:
    """Smallest k solutions of ``A v = lam B v`` for diagonal positive ``B``.

    ``B`` is given as its diagonal. The problem is reduced to the standard
    form ``B^{-1/2} A B^{-1/2}``; the returned vectors are B-orthonormal.
    """
    A = check_symmetric(A)
    b = np.asarray(B, dtype=float)
    if b.ndim == 2:
        b = np.diag(b)
    if b.shape != (A.shape[0],):
        raise ConfigInvalid(f"mass diagonal has length {b.shape}, expected {A.shape[0]}")
    if not np.all(np.isfinite(b)):
        raise NonFinite("mass matrix contains NaN or Inf")
    if np.any(b <= 0):
        raise SingularMass(f"mass matrix has {int(np.sum(b <= 0))} non-positive diagonal entries")
    s = 1.0 / np.sqrt(b)
    if sp.issparse(A):
        S = sp.diags(s)
        At = (S @ A @ S).tocsr()
        At = (At + At.T) * 0.5
    else:
        At = s[:, None] * A * s[None, :]
        At = (At + At.T) * 0.5
    es = eig_sym(At, k, "smallest", **kwargs)
    V = fix_signs(s[:, None] * es.eigenvectors)
    res = _residuals(A, V, es.eigenvalues, b)
    return EigenSystem(es.eigenvalues, V, float(res.max()) if res.size else 0.0)


def soft_threshold(x, tau):
    """``sign(x) * max(|x| - tau, 0)``, elementwise; ``tau`` may broadcast."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ConfigInvalid("threshold must be non-negative")
    x_arr = np.asarray(x, dtype=float)
    out = np.sign(x_arr) * np.maximum(np.abs(x_arr) - tau, 0.0)
    if np.ndim(out) == 0:
        return float(out)
    return out


def solve_spd(A, B) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive (semi)definite ``A``.

    A ridge of ``1e-10 * trace(A)/n`` is added before the Cholesky
    factorisation, and ``1e-6 * trace(A)/n`` on a second attempt.
    """
    A = check_symmetric(sp.csr_matrix(A).toarray() if sp.issparse(A) else A, tol=1e-10)
    B = np.asarray(B, dtype=float)
    if not np.all(np.isfinite(B)):
        raise NonFinite("right-hand side contains NaN or Inf")
    n = A.shape[0]
    if B.shape[0] != n:
        raise ConfigInvalid(f"right-hand side has {B.shape[0]} rows, expected {n}")
    scale = float(np.trace(A)) / n if n else 0.0
    if scale <= 0:
        scale = 1.0
    diag = np.diag(A).copy()
    for jitter in (1e-10, 1e-6):
        K = np.array(A, copy=True)
        K.flat[:: n + 1] = diag + jitter * scale
        try:
            factor = sla.cho_factor(K, lower=True, overwrite_a=True, check_finite=False)
        except np.linalg.LinAlgError:
            del K
            continue
        return sla.cho_solve(factor, B, check_finite=False)
    raise NotPositiveDefinite("Cholesky factorisation failed after jitter")
