"""Right-preconditioned GMRES with modified Gram-Schmidt and Givens rotations"""

from __future__ import annotations

import logging
from typing import Any

import numpy as np

from solvers.base_solver import (
    NO_HOOKS,
    Hessenberg,
    KrylovBaseSolver,
    ResidualRecord,
    SolveOutcome,
    SolveReport,
    SolverHooks,
)
from tools.preconditioners import Preconditioner, PreconditionerKind
from tools.sparse_kernels import CsrMatrix, DenseVector, DimensionMismatchError, dot, norm2, spmv

logger = logging.getLogger(__name__)


def _check_system(A: CsrMatrix, b: DenseVector) -> None:
    if A.nrows != A.ncols:
        raise DimensionMismatchError(f"operator must be square, got {A.shape}")
    if b.shape != (A.nrows,):
        raise DimensionMismatchError(f"right-hand side length {b.shape} does not match {A.nrows}")


class GmresSolver(KrylovBaseSolver):
    """Non-restarted GMRES, right preconditioned: x = x0 + M^{-1} Q y."""

    def __init__(
        self,
        *,
        name: str | None = None,
        description: str | None = None,
        hooks: SolverHooks | None = None,
        verify_residual: bool = True,
        **kwargs: Any,
    ) -> None:
        """Initialize the GMRES solver.

        Args:
            name: The name of the solver.
            description: The description of the solver.
            hooks: Injection hooks; reliable when omitted.
            verify_residual: Recompute the true residual before reporting Converged.
            **kwargs: Passed to KrylovBaseSolver.
        """
        super().__init__(
            name=name or "GMRES",
            description=description or "Right-preconditioned GMRES",
            **kwargs,
        )
        self.hooks = hooks or NO_HOOKS
        self.verify_residual = verify_residual

    def run(
        self,
        A: CsrMatrix,
        M: Preconditioner,
        b: DenseVector,
        x0: DenseVector | None = None,
        *,
        max_iters: int,
        tol: float,
        reliable_A: CsrMatrix | None = None,
    ) -> SolveReport:
        """Solve A x = b.

        Args:
            A: Square operator (possibly failable inside a sandbox).
            M: Right preconditioner.
            b: Right-hand side.
            x0: Initial guess; zero when omitted (and then no initial SpMV is done).
            max_iters: Iteration budget.
            tol: Relative residual tolerance against ||b||.
            reliable_A: Uncorrupted operator for the exit check; defaults to A.

        Returns:
            A SolveReport with the recurrence residual history.
        """
        _check_system(A, b)
        hooks = self.hooks
        reliable_A = reliable_A or A
        start = self._counters()
        history: list[ResidualRecord] = []
        bnorm = norm2(b)

        x0 = self._initial_guess(b, x0)
        if np.any(x0):
            ax = spmv(A, x0)
            hooks.after_spmv(ax)
            r0 = b - ax
        else:
            r0 = b.copy()
        beta = norm2(r0)
        scale = bnorm if bnorm > 0 else 1.0
        self._record(history, 0, beta / scale)

        def report(outcome: SolveOutcome, x: DenseVector, true_residual: float = float("nan")) -> SolveReport:
            return SolveReport(
                outcome=outcome,
                x=x,
                history=history,
                iters=len(history) - 1,
                fault_counters=self._counters().since(start),
                true_residual=true_residual,
                solver=self.name,
            )

        if beta == 0.0 or beta / scale <= tol:
            return report(SolveOutcome.CONVERGED, x0, beta / scale)
        if max_iters <= 0:
            return report(SolveOutcome.MAX_ITERATIONS, x0, beta / scale)

        n = b.shape[0]
        V = np.zeros((max_iters + 1, n))
        V[0] = r0 / beta
        hooks.on_workspace(V.reshape(-1))
        hess = Hessenberg(max_iters, beta)
        breakdown_tol = self.breakdown_factor * scale

        def solution() -> DenseVector:
            k = hess.usable_columns()
            if k == 0:
                return x0.copy()
            u = V[:k].T @ hess.solve(k)
            z = M.apply(u)
            hooks.after_precond(z)
            return x0 + z

        for j in range(max_iters):
            z = M.apply(V[j])
            hooks.after_precond(z)
            w = spmv(A, z)
            hooks.after_spmv(w)

            # modified Gram-Schmidt
            h = np.zeros(j + 2)
            for i in range(j + 1):
                h[i] = dot(V[i], w)
                w -= h[i] * V[i]
            h[j + 1] = norm2(w)

            if not np.all(np.isfinite(h)):
                logger.debug("%s: non-finite Arnoldi column at step %d, stopping", self.name, j + 1)
                break

            hess.set_column(j, h)
            resid = hess.rotate(j) / scale
            self._record(history, j + 1, resid)

            if h[j + 1] <= breakdown_tol:
                x = solution()
                ok, true_residual = self._check(reliable_A, x, b, tol)
                outcome = SolveOutcome.CONVERGED if ok else SolveOutcome.INVARIANT_SUBSPACE
                return report(outcome, x, true_residual)

            V[j + 1] = w / h[j + 1]
            if resid <= tol:
                x = solution()
                ok, true_residual = self._check(reliable_A, x, b, tol)
                if ok:
                    return report(SolveOutcome.CONVERGED, x, true_residual)
                logger.debug("%s: recurrence %.3e but true residual %.3e", self.name, resid, true_residual)

        x = solution()
        return report(SolveOutcome.MAX_ITERATIONS, x, self._check(reliable_A, x, b, tol)[1])

    def _check(self, A: CsrMatrix, x: DenseVector, b: DenseVector, tol: float) -> tuple[bool, float]:
        if not self.verify_residual:
            return True, float("nan")
        return self._verify(A, x, b, tol)


def gmres(
    A: CsrMatrix,
    M: Preconditioner | None,
    b: DenseVector,
    x0: DenseVector | None = None,
    max_iters: int = 50,
    tol: float = 1e-8,
    **kwargs: Any,
) -> SolveReport:
    """Functional wrapper around GmresSolver; extra keywords go to the solver."""
    reliable_A = kwargs.pop("reliable_A", None)
    M = M or Preconditioner(PreconditionerKind.IDENTITY, A.nrows)
    return GmresSolver(**kwargs).run(A, M, b, x0, max_iters=max_iters, tol=tol, reliable_A=reliable_A)
