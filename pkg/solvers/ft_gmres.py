"""Fault-Tolerant GMRES - reliable FGMRES outer iteration over sandboxed inner GMRES solves"""

from __future__ import annotations

import logging
from enum import Enum
from typing import Annotated, Any

import numpy as np
import scipy.linalg as scla
from pydantic import BaseModel, ConfigDict, Field

import config
from faults.fault_log import FaultLog
from faults.injector import FaultInjector, FaultPolicy
from faults.registry import FaultRegistry
from faults.repair import scrub_vector
from solvers.base_solver import SolveReport, SolverHooks
from solvers.fgmres import ArnoldiColumn, FlexibleGmresSolver, InnerApply, OuterState
from solvers.gmres import GmresSolver
from tools.preconditioners import Preconditioner, PreconditionerKind
from tools.sparse_kernels import CsrMatrix, DenseVector, dot, norm2, spmv

logger = logging.getLogger(__name__)

GUARD_REDUCTION = 1e-12


class InnerSchedule(str, Enum):
    DECREASING = "decreasing"
    CONSTANT = "constant"


class RecoveryStrategy(str, Enum):
    RETRY_INNER = "retry"
    RANDOM_Z = "randomz"
    RETURN_LAST_GOOD = "lastgood"


class RefreshMode(str, Enum):
    ALWAYS = "always"
    ON_DETECTION = "ondetect"


class RecoveryAction(str, Enum):
    RETRY_INNER = "retry_inner"
    RANDOM_Z = "random_z"
    RETURN_LAST_GOOD = "return_last_good"


class FtConfig(BaseModel):
    """Knobs of the inner-outer iteration."""

    model_config = ConfigDict(frozen=True)

    s: Annotated[int, Field(ge=0, description="Base inner iteration count.")] = 50
    t: Annotated[int, Field(ge=1, description="Maximum outer iterations.")] = 10
    schedule: InnerSchedule = InnerSchedule.DECREASING
    outer_tol: Annotated[float, Field(gt=0, description="Outer relative residual tolerance.")] = 1e-8
    recovery: RecoveryStrategy = RecoveryStrategy.RETRY_INNER
    refresh: RefreshMode = RefreshMode.ALWAYS
    inner_vectors_failable: bool = True
    first_solve_guard: bool = True
    max_retries: Annotated[int, Field(ge=0, description="Recovery attempts before giving up.")] = 2
    inner_tol: Annotated[
        float | None, Field(gt=0, description="Optional early exit for inner solves.")
    ] = None
    random_seed: int = config.DEFAULT_SEED
    probe_steps: Annotated[int, Field(ge=1, description="Arnoldi steps of the ||A^-1|| probe.")] = 10
    scrub_window: Annotated[int, Field(ge=1)] = config.DEFAULT_SCRUB_WINDOW

    def inner_budget(self, k: int) -> int:
        """Inner iterations at 1-based outer iteration k."""
        if self.schedule is InnerSchedule.DECREASING:
            return max(self.s - k + 1, 1)
        return self.s


def recover(strategy: RecoveryStrategy, attempts: int, max_retries: int) -> RecoveryAction:
    """Next action after a rank-deficient or invalid outer column.

    Retrying and random replacement are each allowed ``max_retries`` times;
    after that the solve stops with the last good iterate.
    """
    if strategy is RecoveryStrategy.RETURN_LAST_GOOD or attempts >= max_retries:
        return RecoveryAction.RETURN_LAST_GOOD
    if strategy is RecoveryStrategy.RETRY_INNER:
        return RecoveryAction.RETRY_INNER
    return RecoveryAction.RANDOM_Z


def estimate_inverse_norm(A: CsrMatrix, start: DenseVector, steps: int = 10) -> float | None:
    """Estimate ||A^-1|| as 1 / sigma_min of a short fault-free Arnoldi projection."""
    if norm2(start) == 0.0:
        return None
    n = start.shape[0]
    steps = min(steps, n)
    Q = np.zeros((steps + 1, n))
    H = np.zeros((steps + 1, steps))
    Q[0] = start / norm2(start)
    k = 0
    for j in range(steps):
        w = spmv(A, Q[j])
        for i in range(j + 1):
            H[i, j] = dot(Q[i], w)
            w -= H[i, j] * Q[i]
        H[j + 1, j] = norm2(w)
        k = j + 1
        if H[j + 1, j] == 0.0:
            break
        Q[j + 1] = w / H[j + 1, j]
    sigma_min = float(scla.svdvals(H[: k + 1, :k], check_finite=False)[-1])
    if not np.isfinite(sigma_min) or sigma_min == 0.0:
        return None
    return 1.0 / sigma_min


class SandboxSession(SolverHooks):
    """Isolation boundary around unreliable work.

    On construction the operator values (matrix, preconditioner factors) are
    registered and checkpointed. Entering the session marks them failable;
    leaving it unmarks them, drops the inner workspace regions and refreshes
    the operator according to the refresh mode. Outer data is never registered.
    """

    def __init__(
        self,
        A: CsrMatrix,
        M: Preconditioner,
        injector: FaultInjector,
        *,
        refresh: RefreshMode = RefreshMode.ALWAYS,
        inner_vectors_failable: bool = True,
        scrub_window: int = config.DEFAULT_SCRUB_WINDOW,
        inner_tol: float | None = None,
    ) -> None:
        self.A = A
        self.M = M
        self.injector = injector
        self.registry = injector.registry
        self.refresh_mode = refresh
        self.inner_vectors_failable = inner_vectors_failable
        self.scrub_window = scrub_window
        self.inner_tol = inner_tol

        self.matrix_region = self.registry.register_region(A.values, name="matrix_values")
        self.operator_regions = [self.matrix_region] + [
            self.registry.register_region(values, name=name) for name, values in M.failable_arrays().items()
        ]
        for region_id in self.operator_regions:
            self.registry.checkpoint(region_id)
        self._workspace_regions: list[int] = []
        self._active = False

    def __enter__(self) -> "SandboxSession":
        for region_id in self.operator_regions:
            self.registry.mark_failable(region_id)
        self._active = True
        return self

    def __exit__(self, *exc_info: Any) -> bool:
        self._active = False
        for region_id in self.operator_regions:
            self.registry.unmark_failable(region_id)
        for region_id in self._workspace_regions:
            self.registry.unregister_region(region_id)
        self._workspace_regions.clear()
        self.refresh()
        return False

    def refresh(self) -> None:
        for region_id in self.operator_regions:
            if self.refresh_mode is RefreshMode.ALWAYS:
                self.registry.restore(region_id)
            elif self.registry.restore_if_detected(region_id):
                logger.info("refreshed %s after detected faults", self.registry.region(region_id).name)

    def pristine_operator(self) -> CsrMatrix:
        """The matrix rebuilt from its reliable checkpoint."""
        return self.A.with_values(self.registry.region(self.matrix_region).checkpoint)

    def hygienic(self) -> bool:
        """All regions unmarked and operator values equal to their checkpoints."""
        return not self.registry.marked_regions() and all(
            self.registry.matches_checkpoint(region_id) for region_id in self.operator_regions
        )

    # solver hooks

    def after_spmv(self, v: DenseVector) -> None:
        self.injector.injection_point(v, operation="spmv")
        scrub_vector(v, self.scrub_window, inplace=True)

    def after_precond(self, z: DenseVector) -> None:
        self.injector.injection_point(z, operation="precond")
        scrub_vector(z, self.scrub_window, inplace=True)

    def on_workspace(self, basis: np.ndarray) -> None:
        if self._active and self.inner_vectors_failable:
            region_id = self.registry.register_region(basis, name="inner_basis")
            self.registry.mark_failable(region_id)
            self._workspace_regions.append(region_id)

    def inner_solve(
        self, q: DenseVector, budget: int, *, k: int = 1, inner_apply: InnerApply | None = None
    ) -> tuple[DenseVector, int]:
        """Sandboxed inner solve for z in A z = q.

        Args:
            q: Current outer basis vector.
            budget: Inner GMRES iterations.
            k: 1-based outer iteration (passed to a custom inner operator).
            inner_apply: Optional replacement for the inner GMRES.

        Returns:
            ``(z, inner_iterations)``; z is always finite, possibly wrong.
        """
        if inner_apply is None and budget == 0:
            return q.copy(), 0
        iterations = 0
        with self, np.errstate(all="ignore"):
            try:
                if inner_apply is not None:
                    z = np.array(inner_apply(k, q), dtype=np.float64)
                else:
                    inner = GmresSolver(name="inner GMRES", hooks=self, verify_residual=False)
                    result = inner.run(
                        self.A, self.M, q, None, max_iters=budget, tol=self.inner_tol or 0.0
                    )
                    z, iterations = result.x, result.iters
            except Exception as exc:
                logger.warning("inner solve failed (%s); falling back to the identity", exc)
                z = q.copy()
        return scrub_vector(z, self.scrub_window), iterations


class FaultTolerantGmresSolver(FlexibleGmresSolver):
    """FT-GMRES: FGMRES whose preconditioner applications are sandboxed inner GMRES solves."""

    def __init__(
        self,
        *,
        settings: FtConfig | None = None,
        policy: FaultPolicy | None = None,
        registry: FaultRegistry | None = None,
        inner_apply: InnerApply | None = None,
        name: str | None = None,
        description: str | None = None,
        **kwargs: Any,
    ) -> None:
        """Initialize the FT-GMRES solver.

        Args:
            settings: Inner-outer configuration.
            policy: Fault injection policy for the inner solves.
            registry: Fault registry to use; a fresh one is created when omitted.
            inner_apply: Custom inner operator replacing inner GMRES (still sandboxed).
            name: The name of the solver.
            description: The description of the solver.
            **kwargs: Passed to FlexibleGmresSolver.
        """
        self.config = settings or FtConfig()
        self.policy = policy or FaultPolicy()
        self.registry = registry or FaultRegistry(FaultLog())
        self.injector = FaultInjector(self.policy, self.registry)
        super().__init__(
            name=name or "FT-GMRES",
            description=description or "Reliable FGMRES outer iteration over unreliable inner GMRES",
            fault_log=self.registry.log,
            **kwargs,
        )
        self.custom_inner = inner_apply
        self.session: SandboxSession | None = None
        self._rng = np.random.default_rng(self.config.random_seed)
        self._inverse_norm: float | None = None
        self._probed = False
        self._inner_iterations = 0
        self._recoveries = 0
        self._reliable_A: CsrMatrix | None = None

    def run(
        self,
        A: CsrMatrix,
        M: Preconditioner | None,
        b: DenseVector,
        x0: DenseVector | None = None,
    ) -> SolveReport:
        """Run FT-GMRES on A x = b.

        Args:
            A: Square operator; its values are failable during inner solves only.
            M: Right preconditioner of the inner solves (identity when None).
            b: Right-hand side.
            x0: Initial guess.

        Returns:
            The SolveReport of the reliable outer iteration.
        """
        M = M or Preconditioner(PreconditionerKind.IDENTITY, A.nrows)
        cfg = self.config
        self.session = SandboxSession(
            A,
            M,
            self.injector,
            refresh=cfg.refresh,
            inner_vectors_failable=cfg.inner_vectors_failable,
            scrub_window=cfg.scrub_window,
            inner_tol=cfg.inner_tol,
        )
        self._inner_iterations = 0
        self._recoveries = 0
        self._reliable_A = self.session.pristine_operator()
        # outer SpMVs and the exit check only ever see the checkpointed values
        report = super().run(
            self._reliable_A,
            self.sandboxed_inner_solve,
            b,
            x0,
            max_outer=cfg.t,
            tol=cfg.outer_tol,
            reliable_A=self._reliable_A,
        )
        report.inner_iterations = self._inner_iterations
        report.recoveries = self._recoveries
        return report

    def sandboxed_inner_solve(self, k: int, q: DenseVector) -> DenseVector:
        z, iterations = self.session.inner_solve(
            q, self.config.inner_budget(k), k=k, inner_apply=self.custom_inner
        )
        self._inner_iterations += iterations
        # z is finite after scrubbing, but its norm may still overflow
        peak = float(np.max(np.abs(z))) if z.size else 0.0
        if not np.isfinite(norm2(z)) and np.isfinite(peak) and peak > 0.0:
            z = z / peak
        return z

    def _work(self) -> int:
        return self._inner_iterations

    def _next_column(self, state: OuterState, j: int) -> ArnoldiColumn:
        if j == 0 and self.config.first_solve_guard:
            return self.first_inner_solve_guard(state)
        return super()._next_column(state, j)

    def _reduces_residual(self, state: OuterState, column: ArnoldiColumn) -> bool:
        if not column.finite:
            return False
        return state.hess.preview_residual(0, column.h) < state.beta * (1.0 - GUARD_REDUCTION)

    def first_inner_solve_guard(self, state: OuterState) -> ArnoldiColumn:
        """First outer iteration: retry an ineffective inner solve once, then use z_1 = q_1."""
        column = self._arnoldi(state, 0, self._direction(state, 0))
        if self._reduces_residual(state, column):
            return column
        logger.info("first inner solve did not reduce the residual; retrying")
        column = self._arnoldi(state, 0, self._direction(state, 0))
        if self._reduces_residual(state, column):
            return column
        logger.warning("first inner solve failed twice; using the identity operator")
        return self._arnoldi(state, 0, state.Q[0].copy())

    def _random_direction(self, state: OuterState) -> DenseVector:
        if not self._probed:
            self._probed = True
            self._inverse_norm = estimate_inverse_norm(self._reliable_A, state.b, self.config.probe_steps)
        z = self._rng.standard_normal(state.b.shape[0])
        return z / norm2(z) * (self._inverse_norm or 1.0)

    def _resolve_breakdown(self, state: OuterState, j: int, column: ArnoldiColumn) -> ArnoldiColumn | None:
        attempts = 0
        while True:
            action = recover(self.config.recovery, attempts, self.config.max_retries)
            if action is RecoveryAction.RETURN_LAST_GOOD:
                logger.warning("%s: returning last good iterate at outer iteration %d", self.name, j + 1)
                return None
            attempts += 1
            self._recoveries += 1
            logger.warning("%s: outer iteration %d recovery %d via %s", self.name, j + 1, attempts, action.value)
            if action is RecoveryAction.RETRY_INNER:
                z = self._direction(state, j)
            else:
                z = self._random_direction(state)
            column = self._arnoldi(state, j, z)
            state.hess.set_column(j, column.h)
            if self._acceptable(state, j, column):
                return column


def ft_gmres(
    A: CsrMatrix,
    M: Preconditioner | None,
    b: DenseVector,
    x0: DenseVector | None = None,
    cfg: FtConfig | None = None,
    policy: FaultPolicy | None = None,
    **kwargs: Any,
) -> SolveReport:
    """Functional wrapper around FaultTolerantGmresSolver."""
    return FaultTolerantGmresSolver(settings=cfg, policy=policy, **kwargs).run(A, M, b, x0)
