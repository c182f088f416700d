"""Cholesky helpers with a shared diagonal-jitter policy.

Posterior covariance blocks in this package are positive definite in exact
arithmetic but can be numerically semi-definite when inputs nearly coincide.
All factorizations therefore go through :func:`jittered_cholesky`: a plain
factorization is attempted first, then ``1e-10 * mean(diag)`` is added to the
diagonal and doubled until either the factorization succeeds or the jitter
exceeds ``1e-6 * mean(diag)``, at which point the matrix is declared not
positive definite.
"""

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .exceptions import FactorizationError, ValidationError

JITTER_START = 1e-10
JITTER_MAX = 1e-6


def _try_cholesky(a):
    """Lower Cholesky factor via LAPACK, or the failing minor order."""
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info == 0:
        return c, 0
    return None, int(info)


def jittered_cholesky(a, return_jitter=False):
    """Lower Cholesky factor of ``a`` under the shared jitter policy.

    Parameters
    ----------
    a : (n, n) array_like
        Symmetric matrix expected to be positive definite up to rounding.
    return_jitter : bool
        If True, also return the jitter that was added to the diagonal.

    Raises
    ------
    FactorizationError
        If the matrix is not positive definite even with the maximum
        jitter; the error names the failing leading minor.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    if a.size == 0:
        c = np.zeros((0, 0))
        return (c, 0.0) if return_jitter else c
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix contains non-finite entries")

    c, info = _try_cholesky(a)
    if info == 0:
        return (c, 0.0) if return_jitter else c

    scale = float(np.mean(np.diag(a)))
    if scale <= 0:
        scale = 1.0
    jitter = JITTER_START * scale
    eye = np.eye(a.shape[0])
    last_info = info
    while jitter <= JITTER_MAX * scale:
        c, info = _try_cholesky(a + jitter * eye)
        if info == 0:
            return (c, jitter) if return_jitter else c
        last_info = info
        jitter *= 2.0
    raise FactorizationError(minor=last_info, jitter=jitter / 2.0)


def chol_solve(chol_lower, b):
    """Solve ``A x = b`` given the lower Cholesky factor of ``A``."""
    if chol_lower.shape[0] == 0:
        return np.zeros_like(np.asarray(b, dtype=float))
    y = solve_triangular(chol_lower, b, lower=True)
    return solve_triangular(chol_lower.T, y, lower=False)


def chol_logdet(chol_lower):
    """Log-determinant of ``A`` given its lower Cholesky factor."""
    if chol_lower.shape[0] == 0:
        return 0.0
    return 2.0 * float(np.sum(np.log(np.diag(chol_lower))))


def symmetrize(a):
    """Average a nearly symmetric matrix with its transpose."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def check_symmetric(a, rel_tol=1e-12, name="matrix"):
    """Raise ValidationError if ``a`` is not symmetric within ``rel_tol``."""
    a = np.asarray(a, dtype=float)
    if a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {a.shape}")
    if a.size == 0:
        return a
    scale = max(float(np.max(np.abs(a))), 1.0)
    if np.max(np.abs(a - a.T)) > rel_tol * scale:
        raise ValidationError(f"{name} is not symmetric within {rel_tol:g} relative")
    return symmetrize(a)
