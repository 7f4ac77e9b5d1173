"""Krylov Base Solver - shared report types, Hessenberg least squares and hooks"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, NamedTuple

import numpy as np
import scipy.linalg as scla

from faults.fault_log import FaultCounters, FaultLog
from tools.sparse_kernels import CsrMatrix, DenseVector, relative_residual

logger = logging.getLogger(__name__)

DEFAULT_BREAKDOWN_FACTOR = 1e-12
DEFAULT_RANK_TOL = 1e-12


class SolveOutcome(str, Enum):
    CONVERGED = "Converged"
    INVARIANT_SUBSPACE = "InvariantSubspace"
    RANK_DEFICIENT = "RankDeficient"
    MAX_ITERATIONS = "MaxIterations"


class ResidualRecord(NamedTuple):
    iteration: int
    residual: float
    faults_injected: int = 0
    faults_detected: int = 0
    work: int = 0


@dataclass
class SolveReport:
    outcome: SolveOutcome
    x: DenseVector
    history: list[ResidualRecord]
    iters: int
    fault_counters: FaultCounters = FaultCounters()
    true_residual: float = float("nan")
    inner_iterations: int = 0
    recoveries: int = 0
    solver: str = ""

    @property
    def resid_history(self) -> list[tuple[int, float]]:
        return [(r.iteration, r.residual) for r in self.history]

    @property
    def final_residual(self) -> float:
        return self.history[-1].residual if self.history else float("nan")


class SolverHooks:
    """Callbacks a sandbox uses to observe and corrupt an unreliable solve.

    The default implementation does nothing, which makes a solve fully reliable.
    """

    def after_spmv(self, v: DenseVector) -> None:
        pass

    def after_precond(self, z: DenseVector) -> None:
        pass

    def on_workspace(self, basis: np.ndarray) -> None:
        pass


NO_HOOKS = SolverHooks()


class Hessenberg:
    """The (m+1) x m projected least-squares problem.

    ``H`` keeps the raw Arnoldi coefficients (used for rank checks), ``R`` the
    Givens-rotated columns and ``g`` the rotated right-hand side beta*e1.
    """

    def __init__(self, m_max: int, beta: float) -> None:
        self.m_max = m_max
        self.H = np.zeros((m_max + 1, m_max))
        self.R = np.zeros((m_max + 1, m_max))
        self.cs = np.zeros(m_max)
        self.sn = np.zeros(m_max)
        self.g = np.zeros(m_max + 1)
        self.g[0] = beta
        self.ncols = 0

    def set_column(self, j: int, h: np.ndarray) -> None:
        """Place raw column j (length j+2); rotations are applied by ``rotate``."""
        self.H[:, j] = 0.0
        self.H[: j + 2, j] = h

    def _rotated(self, j: int) -> np.ndarray:
        r = self.H[: j + 2, j].copy()
        for i in range(j):
            upper = self.cs[i] * r[i] + self.sn[i] * r[i + 1]
            r[i + 1] = -self.sn[i] * r[i] + self.cs[i] * r[i + 1]
            r[i] = upper
        return r

    @staticmethod
    def _givens(a: float, b: float) -> tuple[float, float, float]:
        d = float(np.hypot(a, b))
        if d == 0.0:
            return 1.0, 0.0, 0.0
        return a / d, b / d, d

    def preview_residual(self, j: int, h: np.ndarray) -> float:
        """Least-squares residual if column j were committed as ``h``."""
        saved = self.H[:, j].copy()
        self.set_column(j, h)
        r = self._rotated(j)
        self.H[:, j] = saved
        _, s, _ = self._givens(r[j], r[j + 1])
        return abs(s * self.g[j])

    def rotate(self, j: int) -> float:
        """Commit column j: apply old rotations, build a new one, update g."""
        r = self._rotated(j)
        c, s, d = self._givens(r[j], r[j + 1])
        self.cs[j], self.sn[j] = c, s
        r[j], r[j + 1] = d, 0.0
        self.R[: j + 2, j] = r
        self.g[j + 1] = -s * self.g[j]
        self.g[j] = c * self.g[j]
        self.ncols = j + 1
        return abs(self.g[j + 1])

    def residual_norm(self) -> float:
        return abs(self.g[self.ncols])

    def solve(self, k: int | None = None) -> np.ndarray:
        """Coefficients y minimizing ||beta e1 - H(1:k+1, 1:k) y||."""
        k = self.ncols if k is None else k
        if k == 0:
            return np.zeros(0)
        return scla.solve_triangular(self.R[:k, :k], self.g[:k], check_finite=False)

    def usable_columns(self) -> int:
        """Leading columns with a nonsingular rotated triangle."""
        k = self.ncols
        while k > 0 and self.R[k - 1, k - 1] == 0.0:
            k -= 1
        return k


def rank_check(H: Hessenberg, j: int, rank_tol: float = DEFAULT_RANK_TOL) -> tuple[bool, float]:
    """Is the leading j x j block of H numerically nonsingular?

    Args:
        H: The Hessenberg workspace (raw coefficients are used).
        j: Block size, at least 1.
        rank_tol: Relative singular-value threshold.

    Returns:
        ``(full_rank, sigma_min)``.
    """
    block = H.H[:j, :j]
    if not np.all(np.isfinite(block)):
        return False, float("nan")
    sv = scla.svdvals(block, check_finite=False)
    sigma_min = float(sv[-1])
    return sigma_min > rank_tol * float(sv[0]), sigma_min


class KrylovBaseSolver:
    """Base class for the Krylov solvers."""

    def __init__(
        self,
        *,
        name: str | None = None,
        description: str | None = None,
        breakdown_factor: float = DEFAULT_BREAKDOWN_FACTOR,
        rank_tol: float = DEFAULT_RANK_TOL,
        fault_log: FaultLog | None = None,
        **kwargs: Any,
    ) -> None:
        """Initialize the solver.

        Args:
            name: Label used in reports and logs.
            description: Human readable description.
            breakdown_factor: H(j+1, j) below ``breakdown_factor * ||b||`` is a breakdown.
            rank_tol: Relative threshold for ``rank_check``.
            fault_log: Log whose counters are attached to residual records.
            **kwargs: Ignored extra options.
        """
        self.name = name or "Krylov Solver"
        self.description = description or "Krylov subspace linear solver"
        self.breakdown_factor = breakdown_factor
        self.rank_tol = rank_tol
        self.fault_log = fault_log

    def _counters(self) -> FaultCounters:
        return self.fault_log.counters() if self.fault_log is not None else FaultCounters()

    def _record(self, history: list[ResidualRecord], iteration: int, residual: float) -> None:
        counters = self._counters()
        history.append(
            ResidualRecord(iteration, residual, counters.injected, counters.detected, self._work())
        )

    def _work(self) -> int:
        """Operator applications spent so far (inner iterations for nested solvers)."""
        return 0

    @staticmethod
    def _verify(A: CsrMatrix, x: DenseVector, b: DenseVector, tol: float) -> tuple[bool, float]:
        """True relative residual check with a reliable operator."""
        true_residual = relative_residual(A, x, b)
        return bool(true_residual <= tol), true_residual

    @staticmethod
    def _initial_guess(b: DenseVector, x0: DenseVector | None) -> DenseVector:
        return np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
