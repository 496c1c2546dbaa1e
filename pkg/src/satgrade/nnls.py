"""Active-set nonnegative least squares (Lawson & Hanson, 1974)."""

import numpy as np

from .errors import InvalidArgument

__all__ = ["nnls"]


def nnls(A, b, tol=1e-10, maxiter=None):
    """Solve ``argmin_x ||A x - b||_2`` subject to ``x >= 0``.

    Parameters
    ----------
    A : (m, n) array_like
        Design matrix.
    b : (m,) array_like
        Right-hand side.
    tol : float
        A variable enters the passive set only while its dual value
        ``A.T @ (b - A x)`` exceeds ``tol``; primal values at or below ``tol``
        during the inner loop are treated as hitting the bound.
    maxiter : int, optional
        Cap on outer iterations, default ``3 * n``.

    Returns
    -------
    x : (n,) ndarray
        Nonnegative solution.
    rnorm : float
        Residual norm ``||A x - b||_2``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or b.ndim != 1:
        raise InvalidArgument(f"expected 2-D A and 1-D b, got {A.shape} and {b.shape}")
    m, n = A.shape
    if b.shape[0] != m:
        raise InvalidArgument(f"A has {m} rows but b has {b.shape[0]} entries")
    if maxiter is None:
        maxiter = 3 * n

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ b

    for _ in range(maxiter):
        candidates = ~passive & (w > tol)
        if not candidates.any():
            break
        j = int(np.argmax(np.where(candidates, w, -np.inf)))
        passive[j] = True

        while True:
            s = np.zeros(n)
            s[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(s[passive] > tol):
                break
            # step back toward x until the first passive variable reaches zero
            blocking = passive & (s <= tol)
            denom = x[blocking] - s[blocking]
            ratios = np.where(denom > 0, x[blocking] / np.where(denom > 0, denom, 1.0), 0.0)
            step = ratios.min()
            x = x + step * (s - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not passive.any():
                s = np.zeros(n)
                break
        x = s
        w = A.T @ (b - A @ x)

    return x, float(np.linalg.norm(A @ x - b))
