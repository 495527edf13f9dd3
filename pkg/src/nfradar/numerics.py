"""Complex Hermitian matrix kernels with explicit failure semantics."""

import numpy as np
import scipy.linalg as la


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be Hermitian positive definite is not."""


def chol_hermitian(mtx):
    """Lower Cholesky factor ``C`` with ``mtx = C @ C^H``.

    Raises:
        NotPositiveDefiniteError: if the factorization fails or produces a
            non-finite factor.
    """
    mtx = np.asarray(mtx)
    if mtx.ndim != 2 or mtx.shape[0] != mtx.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mtx.shape}")
    if not np.all(np.isfinite(mtx)):
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    try:
        c = la.cholesky(mtx, lower=True, check_finite=False)
    except la.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"matrix is not positive definite: {exc}") from None
    d = np.real(np.diagonal(c))
    if not np.all(d > 0):
        raise NotPositiveDefiniteError("matrix is not positive definite (zero pivot)")
    return c


def solve_hermitian(mtx, rhs):
    """Solve ``mtx @ x = rhs`` for Hermitian PD ``mtx`` via Cholesky."""
    c = chol_hermitian(mtx)
    return la.cho_solve((c, True), rhs, check_finite=False)


def logdet_hermitian(mtx) -> float:
    """Natural log-determinant of a Hermitian PD matrix: ``2 * sum(log(diag(C)))``."""
    c = chol_hermitian(mtx)
    return float(2.0 * np.sum(np.log(np.real(np.diagonal(c)))))


def condition_estimate(mtx) -> float:
    """Cheap condition number estimate from the Cholesky pivots.

    Returns ``(max diag C / min diag C)**2``, which is exact for diagonal
    matrices and a lower bound on the 2-norm condition number in general.
    """
    d = np.real(np.diagonal(chol_hermitian(mtx)))
    return float((d.max() / d.min()) ** 2)


def hermitian_part(mtx):
    return 0.5 * (mtx + np.conj(np.swapaxes(mtx, -1, -2)))
