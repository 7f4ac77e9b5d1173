"""Right preconditioners - Identity, Jacobi and zero-fill incomplete LU"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse.linalg as spla

from tools.sparse_kernels import CsrMatrix, DenseVector, DimensionMismatchError

logger = logging.getLogger(__name__)

PIVOT_FLOOR = 1e-30


class PreconditionerKind(str, Enum):
    IDENTITY = "none"
    JACOBI = "jacobi"
    ILU0 = "ilu0"


@dataclass
class Preconditioner:
    """Applies z = M^{-1} q.

    Jacobi keeps the reciprocal diagonal; ILU(0) keeps a strictly lower ``lower``
    factor (unit diagonal implicit) and an ``upper`` factor with the diagonal.
    """

    kind: PreconditionerKind
    n: int
    inv_diag: DenseVector | None = None
    lower: CsrMatrix | None = None
    upper: CsrMatrix | None = None

    def failable_arrays(self) -> dict[str, DenseVector]:
        """Floating-point storage that may be registered with the fault registry."""
        if self.kind is PreconditionerKind.JACOBI:
            return {"jacobi_inv_diag": self.inv_diag}
        if self.kind is PreconditionerKind.ILU0:
            return {"ilu_lower_values": self.lower.values, "ilu_upper_values": self.upper.values}
        return {}

    def apply(self, q: DenseVector) -> DenseVector:
        return apply(self, q)


def _pivot_threshold(A: CsrMatrix) -> float:
    return PIVOT_FLOOR * (A.max_abs() or 1.0)


def _substitute_pivot(value: float, threshold: float, row: int) -> float:
    if abs(value) >= threshold:
        return value
    replacement = threshold if value >= 0 else -threshold
    logger.warning("pivot %d is %.3e, replaced by %.3e", row, value, replacement)
    return replacement


def _with_full_diagonal(A: CsrMatrix) -> CsrMatrix:
    """Add explicit zero diagonal entries where A has none stored."""
    rows = A.row_indices()
    present = np.zeros(A.nrows, dtype=bool)
    present[rows[rows == A.col_idx]] = True
    missing = np.flatnonzero(~present)
    if missing.size == 0:
        return A
    logger.warning("%d structurally zero diagonal entries added to the pattern", missing.size)
    r = np.concatenate((rows, missing))
    c = np.concatenate((A.col_idx, missing))
    v = np.concatenate((A.values, np.zeros(missing.size)))
    order = np.lexsort((c, r))
    counts = np.bincount(r, minlength=A.nrows)
    return CsrMatrix(A.nrows, A.ncols, np.concatenate(([0], np.cumsum(counts))), c[order], v[order])


def _ilu0(A: CsrMatrix) -> tuple[CsrMatrix, CsrMatrix]:
    pattern = _with_full_diagonal(A)
    n = pattern.nrows
    row_ptr, cols = pattern.row_ptr, pattern.col_idx
    vals = pattern.values.copy()
    threshold = _pivot_threshold(A)

    diag_pos = np.empty(n, dtype=np.int64)
    for i in range(n):
        start, end = row_ptr[i], row_ptr[i + 1]
        diag_pos[i] = start + int(np.searchsorted(cols[start:end], i))

    # IKJ variant restricted to the pattern of A
    position = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        start, end = row_ptr[i], row_ptr[i + 1]
        position[cols[start:end]] = np.arange(start, end)
        for p in range(start, diag_pos[i]):
            k = cols[p]
            vals[p] /= vals[diag_pos[k]]
            lik = vals[p]
            for q in range(diag_pos[k] + 1, row_ptr[k + 1]):
                target = position[cols[q]]
                if target != -1:
                    vals[target] -= lik * vals[q]
        vals[diag_pos[i]] = _substitute_pivot(vals[diag_pos[i]], threshold, i)
        position[cols[start:end]] = -1

    factored = pattern.with_values(vals)
    rows = factored.row_indices()
    return factored.select(cols < rows), factored.select(cols >= rows)


def build(kind: PreconditionerKind | str, A: CsrMatrix) -> Preconditioner:
    """Construct a right preconditioner for A.

    Args:
        kind: Identity, Jacobi or ILU(0).
        A: Square operator; ignored for Identity.

    Returns:
        The preconditioner. Zero pivots are replaced, never fatal.
    """
    kind = PreconditionerKind(kind)
    if kind is PreconditionerKind.IDENTITY:
        return Preconditioner(kind, A.nrows)
    if A.nrows != A.ncols:
        raise DimensionMismatchError(f"preconditioner needs a square matrix, got {A.shape}")
    if kind is PreconditionerKind.JACOBI:
        threshold = _pivot_threshold(A)
        diag = np.array(
            [_substitute_pivot(d, threshold, i) for i, d in enumerate(A.diagonal())], dtype=np.float64
        )
        return Preconditioner(kind, A.nrows, inv_diag=1.0 / diag)
    lower, upper = _ilu0(A)
    return Preconditioner(kind, A.nrows, lower=lower, upper=upper)


def apply(M: Preconditioner, q: DenseVector) -> DenseVector:
    """Return z = M^{-1} q; non-finite input propagates."""
    if q.shape != (M.n,):
        raise DimensionMismatchError(f"preconditioner expects length {M.n}, got {q.shape}")
    if M.kind is PreconditionerKind.IDENTITY:
        return q.copy()
    if M.kind is PreconditionerKind.JACOBI:
        return M.inv_diag * q
    y = spla.spsolve_triangular(M.lower.as_scipy(), q, lower=True, unit_diagonal=True)
    return np.asarray(spla.spsolve_triangular(M.upper.as_scipy(), y, lower=False), dtype=np.float64)
