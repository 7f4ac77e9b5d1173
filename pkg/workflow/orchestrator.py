"""Experiment Runner - drives FT-GMRES and the GMRES comparison solvers under a fault policy"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Annotated, NamedTuple, TextIO

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

import config
from faults.fault_log import FaultCounters, FaultLog
from faults.injector import FaultInjector, FaultPolicy
from faults.registry import FaultRegistry
from solvers.base_solver import SolveOutcome, SolveReport
from solvers.ft_gmres import (
    FaultTolerantGmresSolver,
    FtConfig,
    InnerSchedule,
    RecoveryStrategy,
    RefreshMode,
    SandboxSession,
)
from solvers.gmres import GmresSolver
from tools import preconditioners
from tools.matrix_market import load_matrix_market
from tools.preconditioners import PreconditionerKind
from tools.sparse_kernels import (
    CsrMatrix,
    DenseVector,
    gen_log_diagonal,
    ones_rhs,
    relative_residual,
    uniform_rhs,
)

logger = logging.getLogger(__name__)

CSV_HEADER = ("solver", "outer", "global_iter", "resid_rel", "faults_injected", "faults_detected")


class HarnessError(RuntimeError):
    """Unusable experiment description (bad problem, rhs or flag combination)."""


class SolverKind(str, Enum):
    FT_GMRES = "ftgmres"
    RESTARTED_GMRES = "rgmres"
    GMRES = "gmres"


class ExperimentSpec(BaseModel):
    """One experiment: a problem, a solver and the faults it runs under."""

    model_config = ConfigDict(frozen=True)

    problem: Annotated[str, Field(description="diag:N:DECADES or mm:PATH")] = "diag:10000:10"
    rhs: Annotated[str, Field(description="aones or uniform:SEED")] = "aones"
    solver: SolverKind = SolverKind.FT_GMRES
    s: Annotated[int, Field(ge=0, description="Inner iterations / restart length.")] = 50
    t: Annotated[int, Field(ge=1, description="Outer iterations / restart cycles.")] = 10
    outer_tol: Annotated[float, Field(gt=0)] = 1e-8
    fault: Annotated[str, Field(description="none, pattern:0,0,1 or poisson:RATE:SEED")] = "none"
    p_detect: Annotated[float, Field(ge=0, le=1)] = config.DEFAULT_P_DETECT
    time_step: Annotated[float, Field(gt=0)] = config.DEFAULT_TIME_STEP
    log_capacity: Annotated[int, Field(ge=1)] = config.DEFAULT_LOG_CAPACITY
    precond: PreconditionerKind = PreconditionerKind.IDENTITY
    refresh: RefreshMode = RefreshMode.ALWAYS
    recovery: RecoveryStrategy = RecoveryStrategy.RETRY_INNER
    schedule: InnerSchedule = InnerSchedule.DECREASING
    first_solve_guard: bool = True
    inner_vectors_failable: bool = True
    inner_tol: Annotated[float | None, Field(gt=0)] = None
    out: Path | None = None
    fault_log: Path | None = None

    @field_validator("problem")
    @classmethod
    def _known_problem(cls, value: str) -> str:
        if not value.startswith(("diag:", "mm:")):
            raise ValueError(f"problem must be diag:N:DECADES or mm:PATH, got '{value}'")
        return value

    @field_validator("rhs")
    @classmethod
    def _known_rhs(cls, value: str) -> str:
        if value != "aones" and not value.startswith("uniform:"):
            raise ValueError(f"rhs must be aones or uniform:SEED, got '{value}'")
        return value

    def policy(self) -> FaultPolicy:
        return FaultPolicy.from_flag(self.fault, p_detect=self.p_detect, time_step=self.time_step)

    def ft_config(self) -> FtConfig:
        return FtConfig(
            s=self.s,
            t=self.t,
            schedule=self.schedule,
            outer_tol=self.outer_tol,
            recovery=self.recovery,
            refresh=self.refresh,
            inner_vectors_failable=self.inner_vectors_failable,
            first_solve_guard=self.first_solve_guard,
            inner_tol=self.inner_tol,
        )


class ConvergenceRecord(NamedTuple):
    solver: str
    outer: int
    global_iter: int
    resid_rel: float
    faults_injected: int
    faults_detected: int

    def as_row(self) -> tuple:
        return (
            self.solver,
            self.outer,
            self.global_iter,
            repr(float(self.resid_rel)),
            self.faults_injected,
            self.faults_detected,
        )


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    outcome: SolveOutcome
    x: DenseVector
    records: list[ConvergenceRecord]
    iterations: int
    true_residual: float
    fault_counters: FaultCounters
    recoveries: int = 0
    fault_log: FaultLog | None = field(default=None, repr=False)

    @property
    def final_residual(self) -> float:
        return self.records[-1].resid_rel if self.records else float("nan")


def load_problem(problem: str, rhs: str) -> tuple[CsrMatrix, DenseVector]:
    """Build the operator and right-hand side named by an experiment.

    Args:
        problem: ``diag:N:DECADES`` or ``mm:PATH``.
        rhs: ``aones`` (b = A * ones) or ``uniform:SEED``.

    Returns:
        ``(A, b)``.
    """
    kind, _, rest = problem.partition(":")
    if kind == "diag":
        try:
            n, decades = rest.split(":")
            A = gen_log_diagonal(int(n), float(decades))
        except ValueError as exc:
            raise HarnessError(f"bad diagonal problem '{problem}': {exc}") from exc
    elif kind == "mm":
        A = load_matrix_market(rest)
    else:
        raise HarnessError(f"unknown problem '{problem}'")

    if rhs == "aones":
        return A, ones_rhs(A)
    try:
        seed = int(rhs.partition(":")[2])
    except ValueError as exc:
        raise HarnessError(f"bad rhs '{rhs}'") from exc
    return A, uniform_rhs(A.nrows, seed)


class ExperimentRunner:
    """Runs ExperimentSpecs and writes their convergence records."""

    def __init__(self, *, verbose: bool = True) -> None:
        self.verbose = verbose
        self.execution_path: list[str] = []

    def run(self, spec: ExperimentSpec, *, write: bool = True) -> ExperimentResult:
        """Execute one experiment.

        Args:
            spec: What to solve, with which solver, under which faults.
            write: Write ``spec.out`` / ``spec.fault_log`` when they are set.

        Returns:
            The ExperimentResult (records, outcome, true residual, fault totals).
        """
        if spec.solver is not SolverKind.FT_GMRES and spec.s == 0:
            raise HarnessError(f"{spec.solver.value} needs --s of at least 1")
        self.execution_path = [spec.problem, spec.solver.value]
        A, b = load_problem(spec.problem, spec.rhs)
        M = preconditioners.build(spec.precond, A)
        pristine = A.copy()
        registry = FaultRegistry(FaultLog(spec.log_capacity))

        if spec.solver is SolverKind.FT_GMRES:
            result = self._run_ft_gmres(spec, A, M, b, registry)
        else:
            cycles, budget = (spec.t, spec.s) if spec.solver is SolverKind.RESTARTED_GMRES else (1, spec.s * spec.t)
            result = self._run_gmres(spec, A, M, b, registry, cycles=cycles, budget=budget)
        result.true_residual = relative_residual(pristine, result.x, b)

        if write and spec.out is not None:
            with open(spec.out, "w", newline="") as sink:
                write_records(result.records, sink)
            self.execution_path.append(str(spec.out))
        if write and spec.fault_log is not None:
            with open(spec.fault_log, "w", newline="") as sink:
                registry.log.dump_csv(sink)
        if self.verbose:
            self.print_summary(result)
        return result

    def _run_ft_gmres(self, spec, A, M, b, registry) -> ExperimentResult:
        solver = FaultTolerantGmresSolver(settings=spec.ft_config(), policy=spec.policy(), registry=registry)
        report: SolveReport = solver.run(A, M, b)
        if not solver.session.hygienic() and spec.refresh is RefreshMode.ALWAYS:
            logger.error("sandbox regions not restored after the solve")
        records = [
            ConvergenceRecord(
                spec.solver.value, r.iteration, r.work, r.residual, r.faults_injected, r.faults_detected
            )
            for r in report.history
            if r.iteration >= 1
        ]
        return ExperimentResult(
            spec=spec,
            outcome=report.outcome,
            x=report.x,
            records=records,
            iterations=report.iters,
            true_residual=report.true_residual,
            fault_counters=report.fault_counters,
            recoveries=report.recoveries,
            fault_log=registry.log,
        )

    def _run_gmres(self, spec, A, M, b, registry, *, cycles: int, budget: int) -> ExperimentResult:
        """(Restarted) GMRES with every SpMV and preconditioner apply unreliable.

        Each cycle runs inside the sandbox, so the operator is refreshed before
        the next restart exactly as FT-GMRES refreshes between inner solves.
        """
        session = SandboxSession(
            A,
            M,
            FaultInjector(spec.policy(), registry),
            refresh=spec.refresh,
            inner_vectors_failable=spec.inner_vectors_failable,
        )
        reliable_A = session.pristine_operator()
        solver = GmresSolver(name=spec.solver.value, hooks=session, verify_residual=False, fault_log=registry.log)
        label = spec.solver.value
        x = np.zeros_like(b)
        records: list[ConvergenceRecord] = []
        offset = 0
        outcome = SolveOutcome.MAX_ITERATIONS

        for cycle in range(1, cycles + 1):
            with session, np.errstate(all="ignore"):
                report = solver.run(A, M, b, x, max_iters=budget, tol=spec.outer_tol)
            for r in report.history[1:]:
                records.append(
                    ConvergenceRecord(label, cycle, offset + r.iteration, r.residual, r.faults_injected, r.faults_detected)
                )
            offset += report.iters
            if np.all(np.isfinite(report.x)):
                x = report.x
            else:
                logger.warning("%s cycle %d produced a non-finite iterate; keeping the previous one", label, cycle)
            if relative_residual(reliable_A, x, b) <= spec.outer_tol:
                outcome = SolveOutcome.CONVERGED
                break

        counters = registry.log.counters()
        return ExperimentResult(
            spec=spec,
            outcome=outcome,
            x=x,
            records=records,
            iterations=offset,
            true_residual=float("nan"),
            fault_counters=counters,
            fault_log=registry.log,
        )

    def print_summary(self, result: ExperimentResult) -> None:
        spec = result.spec
        print("\n" + "=" * 70)
        print(f"🧮 {spec.solver.value.upper()} on {spec.problem}")
        print("=" * 70)
        print("\n[Experiment]")
        print(f"  Fault policy: {spec.policy().label()}")
        print(f"  Preconditioner: {spec.precond.value}")
        print(f"  s={spec.s}  t={spec.t}  tol={spec.outer_tol:g}")

        if result.outcome is SolveOutcome.CONVERGED:
            print(f"\n✅ OUTCOME: {result.outcome.value}")
        elif result.outcome is SolveOutcome.MAX_ITERATIONS:
            print(f"\n⚠️  OUTCOME: {result.outcome.value}")
        else:
            print(f"\n❌ OUTCOME: {result.outcome.value}")
        print(f"  Iterations: {result.iterations}")
        print(f"  Final residual (recurrence): {result.final_residual:.3e}")
        print(f"  Final residual (true): {result.true_residual:.3e}")
        print(f"  Faults injected: {result.fault_counters.injected}")
        print(f"  Faults detected: {result.fault_counters.detected}")
        if result.fault_counters.overflow:
            print(f"  Fault log overflow: {result.fault_counters.overflow}")
        if result.recoveries:
            print(f"  Recoveries: {result.recoveries}")
        print(f"\n📊 Path: {' → '.join(self.execution_path)}")
        print("=" * 70 + "\n")


def write_records(records: list[ConvergenceRecord], sink: TextIO) -> None:
    """Write convergence records as CSV; floats use repr so reruns are byte-identical."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for record in records:
        writer.writerow(record.as_row())
