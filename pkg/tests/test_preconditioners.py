import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from tests.conftest import random_sparse_dense
from tools import preconditioners
from tools.preconditioners import PreconditionerKind
from tools.sparse_kernels import CsrMatrix, DimensionMismatchError, spmv


def _dense_lu(dense: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = dense.shape[0]
    L, U = np.eye(n), dense.copy()
    for k in range(n):
        for i in range(k + 1, n):
            L[i, k] = U[i, k] / U[k, k]
            U[i, :] -= L[i, k] * U[k, :]
    return L, U


def test_ilu0_of_identity():
    M = preconditioners.build(PreconditionerKind.ILU0, CsrMatrix.identity(4))
    assert M.lower.nnz == 0
    assert_array_equal(M.upper.to_dense(), np.eye(4))


def test_jacobi_reciprocal_diagonal():
    M = preconditioners.build("jacobi", CsrMatrix.from_dense(np.diag([2.0, 4.0])))
    assert_array_equal(M.inv_diag, [0.5, 0.25])
    assert_array_equal(M.apply(np.array([2.0, 4.0])), [1.0, 1.0])


def test_identity_apply_copies():
    M = preconditioners.build(PreconditionerKind.IDENTITY, CsrMatrix.identity(2))
    q = np.array([1.0, 2.0])
    z = preconditioners.apply(M, q)
    assert_array_equal(z, q)
    assert z is not q
    assert M.failable_arrays() == {}


def test_ilu0_dense_pattern_matches_exact_lu():
    dense = np.array([[4.0, 1.0, 2.0], [1.0, 5.0, 1.0], [2.0, 1.0, 6.0]])
    M = preconditioners.build(PreconditionerKind.ILU0, CsrMatrix.from_dense(dense))
    L, U = _dense_lu(dense)
    assert_allclose(M.lower.to_dense() + np.eye(3), L, rtol=1e-14)
    assert_allclose(M.upper.to_dense(), U, rtol=1e-14)
    q = np.array([1.0, -2.0, 0.5])
    assert_allclose(M.apply(q), np.linalg.solve(dense, q), rtol=1e-12)


def test_ilu0_keeps_the_sparsity_pattern(rng):
    A = CsrMatrix.from_dense(random_sparse_dense(rng, 15, density=0.2))
    M = preconditioners.build(PreconditionerKind.ILU0, A)
    assert M.lower.nnz + M.upper.nnz == A.nnz
    assert set(M.failable_arrays()) == {"ilu_lower_values", "ilu_upper_values"}


def test_jacobi_inverts_spd_diagonal(rng):
    d = rng.uniform(0.5, 10.0, size=30)
    A = CsrMatrix.from_dense(np.diag(d))
    x = rng.uniform(-1.0, 1.0, size=30)
    assert_allclose(preconditioners.build("jacobi", A).apply(spmv(A, x)), x, rtol=1e-14)


def test_zero_pivots_are_replaced_not_fatal():
    A = CsrMatrix.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
    for kind in (PreconditionerKind.JACOBI, PreconditionerKind.ILU0):
        z = preconditioners.build(kind, A).apply(np.array([1.0, 1.0]))
        assert np.all(np.isfinite(z))


def test_non_square_is_rejected():
    A = CsrMatrix(2, 3, np.array([0, 1, 2]), np.array([0, 1]), np.array([1.0, 1.0]))
    with pytest.raises(DimensionMismatchError):
        preconditioners.build(PreconditionerKind.ILU0, A)


def test_apply_rejects_wrong_length():
    M = preconditioners.build(PreconditionerKind.JACOBI, CsrMatrix.identity(3))
    with pytest.raises(DimensionMismatchError):
        M.apply(np.ones(2))


def test_non_finite_input_propagates():
    M = preconditioners.build(PreconditionerKind.JACOBI, CsrMatrix.identity(2))
    assert np.isnan(M.apply(np.array([np.nan, 1.0]))[0])
