"""Direct solution of sparse symmetric (possibly indefinite) systems."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when the factorisation detects a (numerically) singular matrix."""

    def __init__(self, msg, pivot_ratio=None):
        super().__init__(msg)
        self.pivot_ratio = pivot_ratio


# diagonal pivots first (the Newton matrices are symmetric with a nonzero
# diagonal), then partial pivoting; SuperLU's MMD ordering is too slow here
_STRATEGIES = (("COLAMD", 0.0), ("COLAMD", 1.0))


def _lu_solve(A, b, spec, thresh):
    n = A.shape[0]
    try:
        lu = spla.splu(A, permc_spec=spec, diag_pivot_thresh=thresh)
    except RuntimeError as exc:  # SuperLU: "Factor is exactly singular"
        raise SingularMatrixError(f"singular matrix: {exc}", 0.0) from None
    piv = np.abs(lu.U.diagonal())
    ratio = piv.min() / piv.max() if piv.max() > 0 else 0.0
    if not ratio > n * np.finfo(float).eps:
        raise SingularMatrixError(
            f"numerically singular matrix: pivot ratio {ratio:.3e} at {int(piv.argmin())}",
            ratio,
        )
    return lu.solve(b), ratio


def factor_solve(A, b, *, check: bool = True) -> np.ndarray:
    """Solve ``A x = b`` by sparse LU.

    Diagonal pivoting is tried first; if its pivots or residual are
    unacceptable the matrix is refactorised with partial pivoting.
    Raises :class:`SingularMatrixError` if a pivot is (numerically) zero
    or the residual bound ``|Ax - b| <= 1e-10 (|A|_max |x| + |b|)`` fails
    for both.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix must be square, got {A.shape}")
    if b.shape[0] != n:
        raise ValueError(f"rhs has length {b.shape[0]}, expected {n}")
    if n == 0:
        return np.zeros_like(b)
    if not np.all(np.isfinite(A.data)):
        raise ValueError("matrix has non-finite entries")
    amax = np.abs(A.data).max()
    last = None
    for spec, thresh in _STRATEGIES:
        try:
            x, ratio = _lu_solve(A, b, spec, thresh)
        except SingularMatrixError as exc:
            last = exc
            continue
        if not check:
            return x
        r = np.linalg.norm(A @ x - b)
        bound = 1e-10 * (amax * np.linalg.norm(x) + np.linalg.norm(b))
        if r <= bound:
            return x
        last = SingularMatrixError(
            f"residual {r:.3e} exceeds bound {bound:.3e} (pivot ratio {ratio:.3e})", ratio
        )
    raise last
