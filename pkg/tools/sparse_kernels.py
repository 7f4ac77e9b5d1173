"""Sparse Kernels - CSR operator, BLAS-1 vector tools and test-matrix generators"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Annotated

import numpy as np
import numpy.typing as npt
import scipy.linalg as scla
import scipy.sparse as sp
from pydantic import Field, validate_call

DenseVector = npt.NDArray[np.float64]


class SparseFormatError(ValueError):
    """Raised when CSR arrays violate the compressed-row invariants."""


class DimensionMismatchError(ValueError):
    """Raised when operand lengths do not match (a caller bug)."""


@dataclass
class CsrMatrix:
    """Compressed sparse row operator.

    The structure arrays (``row_ptr``, ``col_idx``) are always reliable; only
    ``values`` is ever handed to the fault registry.
    """

    nrows: int
    ncols: int
    row_ptr: npt.NDArray[np.int64]
    col_idx: npt.NDArray[np.int64]
    values: DenseVector

    def __post_init__(self) -> None:
        self.row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.validate()

    @property
    def nnz(self) -> int:
        return int(self.col_idx.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    def validate(self) -> None:
        """Check the CSR invariants; raise SparseFormatError on violation."""
        if self.row_ptr.shape != (self.nrows + 1,):
            raise SparseFormatError(f"row_ptr must have length {self.nrows + 1}")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != self.nnz:
            raise SparseFormatError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise SparseFormatError("row_ptr must be nondecreasing")
        if self.values.shape != self.col_idx.shape:
            raise SparseFormatError("values and col_idx lengths differ")
        if self.nnz and (self.col_idx.min() < 0 or self.col_idx.max() >= self.ncols):
            raise SparseFormatError(f"column index outside [0, {self.ncols})")
        # strictly increasing columns inside each row
        steps = np.diff(self.col_idx)
        row_starts = self.row_ptr[1:-1]
        inside_row = np.ones(steps.shape, dtype=bool)
        inside_row[row_starts[(row_starts > 0) & (row_starts < self.nnz)] - 1] = False
        if np.any(steps[inside_row] <= 0):
            raise SparseFormatError("column indices must be strictly increasing within a row")

    def row_indices(self) -> npt.NDArray[np.int64]:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.nrows, dtype=np.int64), np.diff(self.row_ptr))

    def as_scipy(self) -> sp.csr_matrix:
        """Scipy view over the current arrays (values are not copied)."""
        return sp.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=self.shape, copy=False
        )

    def copy(self) -> "CsrMatrix":
        return CsrMatrix(
            self.nrows, self.ncols, self.row_ptr.copy(), self.col_idx.copy(), self.values.copy()
        )

    def with_values(self, values: DenseVector) -> "CsrMatrix":
        """Same structure, different values (structure arrays are shared)."""
        return CsrMatrix(self.nrows, self.ncols, self.row_ptr, self.col_idx, values)

    def select(self, mask: npt.NDArray[np.bool_]) -> "CsrMatrix":
        """Keep only the stored entries where ``mask`` is true."""
        counts = np.bincount(self.row_indices()[mask], minlength=self.nrows)
        row_ptr = np.concatenate(([0], np.cumsum(counts)))
        return CsrMatrix(self.nrows, self.ncols, row_ptr, self.col_idx[mask], self.values[mask])

    def diagonal(self) -> DenseVector:
        diag = np.zeros(min(self.nrows, self.ncols))
        rows = self.row_indices()
        on_diag = rows == self.col_idx
        diag[rows[on_diag]] = self.values[on_diag]
        return diag

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.nnz else 0.0

    def to_dense(self) -> npt.NDArray[np.float64]:
        return self.as_scipy().toarray()

    @classmethod
    def from_scipy(cls, matrix: sp.spmatrix) -> "CsrMatrix":
        csr = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_dense(cls, dense: npt.ArrayLike) -> "CsrMatrix":
        """Store every nonzero of a dense array."""
        return cls.from_scipy(sp.csr_matrix(np.asarray(dense, dtype=np.float64)))

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))


def _check_lengths(x: DenseVector, y: DenseVector) -> None:
    if x.shape != y.shape:
        raise DimensionMismatchError(f"vector lengths differ: {x.shape[0]} vs {y.shape[0]}")


def spmv(A: CsrMatrix, x: DenseVector) -> DenseVector:
    """Sparse matrix-vector product y = A x.

    Args:
        A: The CSR operator.
        x: Input vector of length ``A.ncols``; never modified.

    Returns:
        A new vector of length ``A.nrows``.
    """
    if x.ndim != 1 or x.shape[0] != A.ncols:
        raise DimensionMismatchError(f"spmv expects length {A.ncols}, got {x.shape}")
    return np.asarray(A.as_scipy() @ x, dtype=np.float64)


def dot(x: DenseVector, y: DenseVector) -> float:
    _check_lengths(x, y)
    return float(np.dot(x, y))


def norm2(x: DenseVector) -> float:
    # BLAS nrm2 scales internally, so large-but-finite corrupted entries do not overflow
    return float(scla.norm(x, check_finite=False))


def axpy(alpha: float, x: DenseVector, y: DenseVector) -> DenseVector:
    """Return alpha*x + y as a new vector."""
    _check_lengths(x, y)
    return alpha * x + y


def scale(alpha: float, x: DenseVector) -> DenseVector:
    return alpha * x


@validate_call
def gen_log_diagonal(
    n: Annotated[int, Field(ge=2, description="Number of rows (at least 2).")],
    decades: Annotated[float, Field(gt=0, description="Base-10 decades spanned by the diagonal.")],
) -> CsrMatrix:
    """Diagonal test matrix with logarithmically spaced entries.

    Entry i is ``10**(-decades * i / (n - 1))``, so the first entry is 1, the
    last is ``10**-decades`` and the condition number is ``10**decades``.

    Args:
        n: Number of rows.
        decades: Decades spanned by the diagonal.

    Returns:
        The diagonal operator in CSR form.
    """
    exponents = np.linspace(0.0, -decades, n)
    diag = np.power(10.0, exponents)
    idx = np.arange(n, dtype=np.int64)
    return CsrMatrix(n, n, np.arange(n + 1, dtype=np.int64), idx, diag)


def ones_rhs(A: CsrMatrix) -> DenseVector:
    """Right-hand side b = A * ones, so the exact solution is all ones."""
    return spmv(A, np.ones(A.ncols))


def uniform_rhs(n: int, seed: int) -> DenseVector:
    """Seeded uniform [-1, 1] right-hand side."""
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=n)


def relative_residual(A: CsrMatrix, x: DenseVector, b: DenseVector) -> float:
    """||b - A x|| / ||b|| (absolute residual when b is zero)."""
    bnorm = norm2(b)
    resid = norm2(b - spmv(A, x))
    return resid / bnorm if bnorm > 0 else resid
