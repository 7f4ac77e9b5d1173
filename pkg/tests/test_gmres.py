import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose

from solvers.base_solver import Hessenberg, SolveOutcome, SolverHooks, rank_check
from solvers.gmres import GmresSolver, gmres
from tests.conftest import random_sparse_dense
from tools import preconditioners
from tools.preconditioners import PreconditionerKind
from tools.sparse_kernels import CsrMatrix, DimensionMismatchError


def _nonincreasing(values: list[float]) -> bool:
    return all(b <= a * (1.0 + 1e-14) for a, b in zip(values, values[1:]))


def test_identity_converges_in_one_iteration(rng):
    b = rng.uniform(-1.0, 1.0, size=6)
    report = gmres(CsrMatrix.identity(6), None, b)
    assert report.outcome is SolveOutcome.CONVERGED
    assert report.iters == 1
    assert_allclose(report.x, b, rtol=1e-15)


def test_small_dense_system_matches_direct_solve(rng):
    dense = rng.uniform(-1.0, 1.0, size=(8, 8)) + 8.0 * np.eye(8)
    b = rng.uniform(-1.0, 1.0, size=8)
    report = gmres(CsrMatrix.from_dense(dense), None, b, max_iters=8, tol=1e-12)
    assert report.outcome is SolveOutcome.CONVERGED
    assert report.iters <= 8
    assert_allclose(report.x, np.linalg.solve(dense, b), rtol=1e-10)


def test_three_distinct_eigenvalues(rng):
    d = np.repeat([1.0, 2.0, 5.0], 7)
    b = rng.uniform(0.5, 1.5, size=d.size)
    report = gmres(CsrMatrix.from_dense(np.diag(d)), None, b, max_iters=10, tol=1e-12)
    assert report.outcome is SolveOutcome.CONVERGED
    assert report.iters <= 3


@pytest.mark.parametrize("kind", list(PreconditionerKind))
def test_randomized_systems_match_dense_solves(kind):
    rng = np.random.default_rng(1000 + len(kind.value))
    for _ in range(200 // len(PreconditionerKind) + 1):
        n = int(rng.integers(2, 31))
        dense = random_sparse_dense(rng, n)
        b = rng.uniform(-1.0, 1.0, size=n)
        A = CsrMatrix.from_dense(dense)
        M = preconditioners.build(kind, A)
        report = gmres(A, M, b, max_iters=n, tol=1e-12)
        expected = np.linalg.solve(dense, b)
        assert report.outcome is SolveOutcome.CONVERGED
        assert np.linalg.norm(report.x - expected) <= 1e-10 * np.linalg.norm(expected)


def test_finite_termination_on_few_distinct_eigenvalues():
    rng = np.random.default_rng(77)
    for _ in range(50):
        k = int(rng.integers(1, 11))
        eigenvalues = rng.choice(np.arange(1.0, 21.0), size=k, replace=False)
        d = rng.choice(eigenvalues, size=40)
        d[:k] = eigenvalues
        b = rng.uniform(0.5, 1.5, size=40)
        report = gmres(CsrMatrix.from_dense(np.diag(d)), None, b, max_iters=40, tol=1e-12)
        assert report.outcome is SolveOutcome.CONVERGED
        assert report.iters <= k


def test_residual_history_is_nonincreasing(small_system):
    A, b, _ = small_system
    report = gmres(A, None, b, max_iters=15, tol=1e-14)
    assert _nonincreasing([r for _, r in report.resid_history])
    assert report.resid_history[0] == (0, 1.0)


def test_recurrence_matches_true_residual(small_system):
    A, b, dense = small_system
    report = gmres(A, None, b, max_iters=5, tol=1e-14)
    assert report.outcome is SolveOutcome.MAX_ITERATIONS
    true_residual = np.linalg.norm(b - dense @ report.x) / np.linalg.norm(b)
    assert report.final_residual == pytest.approx(true_residual, rel=1e-8)


def test_zero_rhs_returns_immediately():
    report = gmres(CsrMatrix.identity(3), None, np.zeros(3))
    assert report.outcome is SolveOutcome.CONVERGED
    assert report.iters == 0
    assert not np.any(report.x)


def test_nonzero_initial_guess(small_system):
    A, b, dense = small_system
    x0 = np.ones(20)
    report = GmresSolver().run(A, preconditioners.build("jacobi", A), b, x0, max_iters=20, tol=1e-12)
    assert report.outcome is SolveOutcome.CONVERGED
    assert_allclose(report.x, np.linalg.solve(dense, b), rtol=1e-9)


def test_dimension_checks():
    with pytest.raises(DimensionMismatchError):
        gmres(CsrMatrix.identity(3), None, np.ones(4))
    rectangular = CsrMatrix(2, 3, np.array([0, 1, 2]), np.array([0, 1]), np.ones(2))
    with pytest.raises(DimensionMismatchError):
        gmres(rectangular, None, np.ones(2))


def test_givens_solution_matches_dense_least_squares(rng):
    m = 6
    H = np.triu(rng.uniform(-1.0, 1.0, size=(m + 1, m)), -1)
    hess = Hessenberg(m, 2.0)
    for j in range(m):
        hess.set_column(j, H[: j + 2, j])
        hess.rotate(j)
    rhs = np.zeros(m + 1)
    rhs[0] = 2.0
    y, *_ = np.linalg.lstsq(H, rhs, rcond=None)
    assert_allclose(hess.solve(), y, rtol=1e-12, atol=1e-12)
    assert hess.residual_norm() == pytest.approx(np.linalg.norm(rhs - H @ y), rel=1e-10)


def test_rank_check_examples(rng):
    zero = Hessenberg(1, 1.0)
    zero.set_column(0, np.array([0.0, 1.0]))
    assert rank_check(zero, 1)[0] is False

    eye = Hessenberg(2, 1.0)
    eye.set_column(0, np.array([1.0, 0.0]))
    eye.set_column(1, np.array([0.0, 1.0, 0.5]))
    full_rank, sigma_min = rank_check(eye, 2)
    assert full_rank
    assert sigma_min == pytest.approx(1.0, rel=1e-14)

    H = np.triu(rng.uniform(-1.0, 1.0, size=(7, 6)), -1)
    hess = Hessenberg(6, 1.0)
    for j in range(6):
        hess.set_column(j, H[: j + 2, j])
    full_rank, sigma_min = rank_check(hess, 6)
    assert full_rank
    assert sigma_min == pytest.approx(np.linalg.svd(H[:6, :6], compute_uv=False)[-1], rel=1e-12)


def _shifted_cycle(n: int, shift: float) -> CsrMatrix:
    """shift*I + cyclic permutation: well conditioned, but GMRES converges slowly."""
    rows = np.arange(n)
    A = sp.csr_matrix((np.ones(n), (rows, (rows + 1) % n)), shape=(n, n)) + shift * sp.identity(n, format="csr")
    return CsrMatrix.from_scipy(A)


class _BasisCapture(SolverHooks):
    def __init__(self) -> None:
        self.basis: np.ndarray | None = None

    def on_workspace(self, basis: np.ndarray) -> None:
        self.basis = basis


def test_fault_free_basis_stays_orthonormal(rng):
    n, iters = 200, 50
    A = _shifted_cycle(n, 1.1)
    b = rng.uniform(-1.0, 1.0, size=n)
    capture = _BasisCapture()
    M = preconditioners.build(PreconditionerKind.IDENTITY, A)
    report = GmresSolver(hooks=capture).run(A, M, b, max_iters=iters, tol=1e-14)
    assert report.outcome is SolveOutcome.MAX_ITERATIONS
    assert report.iters == iters
    V = capture.basis.reshape(iters + 1, n)
    assert np.max(np.abs(V @ V.T - np.eye(iters + 1))) <= 1e-8


def test_recurrence_matches_true_residual_at_every_iteration(rng):
    n = 200
    A = _shifted_cycle(n, 1.1)
    dense = A.to_dense()
    b = rng.uniform(-1.0, 1.0, size=n)
    for k in range(1, 51):
        report = gmres(A, None, b, max_iters=k, tol=1e-14)
        assert report.iters == k
        true_residual = np.linalg.norm(b - dense @ report.x) / np.linalg.norm(b)
        assert report.final_residual == pytest.approx(true_residual, rel=1e-8)
