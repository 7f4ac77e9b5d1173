"""Flexible GMRES - a different preconditioner application per outer iteration"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from solvers.base_solver import (
    Hessenberg,
    KrylovBaseSolver,
    ResidualRecord,
    SolveOutcome,
    SolveReport,
    rank_check,
)
from solvers.gmres import _check_system
from tools.sparse_kernels import CsrMatrix, DenseVector, dot, norm2, spmv

logger = logging.getLogger(__name__)

InnerApply = Callable[[int, DenseVector], DenseVector]


@dataclass
class ArnoldiColumn:
    z: DenseVector
    w: DenseVector
    h: np.ndarray

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.h)))


@dataclass
class OuterState:
    """Workspace of one flexible solve (basis Q, directions Z, projected problem)."""

    A: CsrMatrix
    b: DenseVector
    x0: DenseVector
    scale: float
    inner_apply: InnerApply
    Q: np.ndarray
    hess: Hessenberg
    breakdown_tol: float
    beta: float = 0.0
    Z: list[DenseVector] = field(default_factory=list)
    history: list[ResidualRecord] = field(default_factory=list)

    def solution(self, k: int) -> DenseVector:
        """x_k = x0 + [z_1 .. z_k] y_k."""
        if k == 0:
            return self.x0.copy()
        y = self.hess.solve(k)
        return self.x0 + np.column_stack(self.Z[:k]) @ y


class FlexibleGmresSolver(KrylovBaseSolver):
    """FGMRES with a rank check on breakdown.

    When H(j+1, j) falls below the breakdown tolerance the leading j x j block
    decides the outcome: nonsingular means an invariant subspace was found,
    singular means the flexible basis is rank deficient and the solve cannot
    continue with that direction.
    """

    def __init__(self, *, name: str | None = None, description: str | None = None, **kwargs: Any) -> None:
        super().__init__(
            name=name or "FGMRES",
            description=description or "Flexible GMRES with explicit preconditioned directions",
            **kwargs,
        )

    def run(
        self,
        A: CsrMatrix,
        inner_apply: InnerApply,
        b: DenseVector,
        x0: DenseVector | None = None,
        *,
        max_outer: int,
        tol: float,
        reliable_A: CsrMatrix | None = None,
    ) -> SolveReport:
        """Solve A x = b with z_j = inner_apply(j, q_j).

        Args:
            A: Square operator used for the outer SpMV.
            inner_apply: Called as ``inner_apply(j, q_j)`` with 1-based j.
            b: Right-hand side.
            x0: Initial guess (zero when omitted).
            max_outer: Maximum outer iterations.
            tol: Relative residual tolerance against ||b||.
            reliable_A: Operator for the exit residual check; defaults to A.

        Returns:
            A SolveReport whose outcome is one of the four SolveOutcome values.
        """
        _check_system(A, b)
        reliable_A = reliable_A or A
        start = self._counters()
        x0 = self._initial_guess(b, x0)
        bnorm = norm2(b)
        scale = bnorm if bnorm > 0 else 1.0
        r0 = b - spmv(A, x0) if np.any(x0) else b.copy()
        beta = norm2(r0)

        state = OuterState(
            A=A,
            b=b,
            x0=x0,
            scale=scale,
            inner_apply=inner_apply,
            Q=np.zeros((max_outer + 1, b.shape[0])),
            hess=Hessenberg(max_outer, beta),
            breakdown_tol=self.breakdown_factor * scale,
            beta=beta,
        )
        self._record(state.history, 0, beta / scale)

        def report(outcome: SolveOutcome, x: DenseVector, true_residual: float) -> SolveReport:
            logger.info("%s finished: %s after %d iterations", self.name, outcome.value, len(state.history) - 1)
            return SolveReport(
                outcome=outcome,
                x=x,
                history=state.history,
                iters=len(state.history) - 1,
                fault_counters=self._counters().since(start),
                true_residual=true_residual,
                solver=self.name,
            )

        if beta == 0.0 or beta / scale <= tol:
            return report(SolveOutcome.CONVERGED, x0, beta / scale)
        state.Q[0] = r0 / beta

        for j in range(max_outer):
            column = self._next_column(state, j)
            state.hess.set_column(j, column.h)
            if not self._acceptable(state, j, column):
                column = self._resolve_breakdown(state, j, column)
                if column is None:
                    x = state.solution(j)
                    return report(SolveOutcome.RANK_DEFICIENT, x, self._verify(reliable_A, x, b, tol)[1])

            state.Z.append(column.z)
            resid = state.hess.rotate(j) / scale
            self._record(state.history, j + 1, resid)
            logger.debug("%s outer %d: residual %.3e", self.name, j + 1, resid)

            if column.h[j + 1] <= state.breakdown_tol:
                x = state.solution(j + 1)
                ok, true_residual = self._verify(reliable_A, x, b, tol)
                outcome = SolveOutcome.CONVERGED if ok else SolveOutcome.INVARIANT_SUBSPACE
                return report(outcome, x, true_residual)

            state.Q[j + 1] = column.w / column.h[j + 1]
            if resid <= tol:
                x = state.solution(j + 1)
                ok, true_residual = self._verify(reliable_A, x, b, tol)
                if ok:
                    return report(SolveOutcome.CONVERGED, x, true_residual)

        x = state.solution(max_outer)
        return report(SolveOutcome.MAX_ITERATIONS, x, self._verify(reliable_A, x, b, tol)[1])

    def _direction(self, state: OuterState, j: int) -> DenseVector:
        return np.asarray(state.inner_apply(j + 1, state.Q[j]), dtype=np.float64)

    def _arnoldi(self, state: OuterState, j: int, z: DenseVector) -> ArnoldiColumn:
        """Reliable outer step: w = A z, orthogonalized against q_1..q_{j+1}."""
        w = spmv(state.A, z)
        h = np.zeros(j + 2)
        for i in range(j + 1):
            h[i] = dot(state.Q[i], w)
            w -= h[i] * state.Q[i]
        h[j + 1] = norm2(w)
        return ArnoldiColumn(z, w, h)

    def _next_column(self, state: OuterState, j: int) -> ArnoldiColumn:
        return self._arnoldi(state, j, self._direction(state, j))

    def _acceptable(self, state: OuterState, j: int, column: ArnoldiColumn) -> bool:
        if not column.finite:
            return False
        if column.h[j + 1] > state.breakdown_tol:
            return True
        full_rank, sigma_min = rank_check(state.hess, j + 1, self.rank_tol)
        logger.debug("%s breakdown at %d: sigma_min %.3e, full rank %s", self.name, j + 1, sigma_min, full_rank)
        return full_rank

    def _resolve_breakdown(self, state: OuterState, j: int, column: ArnoldiColumn) -> ArnoldiColumn | None:
        logger.warning("%s: rank-deficient or invalid column at outer iteration %d", self.name, j + 1)
        return None


def fgmres(
    A: CsrMatrix,
    inner_apply: InnerApply,
    b: DenseVector,
    x0: DenseVector | None = None,
    max_outer: int = 50,
    tol: float = 1e-8,
    **kwargs: Any,
) -> SolveReport:
    """Functional wrapper around FlexibleGmresSolver."""
    reliable_A = kwargs.pop("reliable_A", None)
    return FlexibleGmresSolver(**kwargs).run(
        A, inner_apply, b, x0, max_outer=max_outer, tol=tol, reliable_A=reliable_A
    )
