"""Iteration tables - outer iterations to convergence over tolerance x fault-policy sweeps"""

from __future__ import annotations

import csv
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TextIO

from solvers.base_solver import SolveOutcome
from workflow.orchestrator import ExperimentRunner, ExperimentSpec

logger = logging.getLogger(__name__)

NOT_CONVERGED = "-"


@dataclass
class IterationTable:
    tolerances: list[float]
    faults: list[str]
    counts: list[list[int | None]]

    def count(self, tol: float, fault: str) -> int | None:
        return self.counts[self.tolerances.index(tol)][self.faults.index(fault)]

    def rows(self) -> list[list[str]]:
        header = ["tol", *self.faults]
        body = [
            [f"{tol:g}", *(NOT_CONVERGED if c is None else str(c) for c in row)]
            for tol, row in zip(self.tolerances, self.counts)
        ]
        return [header, *body]

    def write_csv(self, sink: TextIO) -> None:
        csv.writer(sink, lineterminator="\n").writerows(self.rows())

    def render(self) -> str:
        rows = self.rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows)


def table_iterations(
    base: ExperimentSpec,
    tolerances: Sequence[float],
    faults: Sequence[str],
    runner: ExperimentRunner | None = None,
) -> IterationTable:
    """Outer iterations FT-GMRES needs per (tolerance, fault policy) pair.

    Args:
        base: Experiment the sweep is derived from (problem, s, t, solver knobs).
        tolerances: Outer tolerances, one table row each.
        faults: Fault policy flags, one table column each.
        runner: Runner to use; a quiet one is created when omitted.

    Returns:
        The table; cells are None where the run did not converge within t.
    """
    runner = runner or ExperimentRunner(verbose=False)
    counts: list[list[int | None]] = []
    for tol in tolerances:
        row: list[int | None] = []
        for fault in faults:
            spec = base.model_copy(update={"outer_tol": tol, "fault": fault, "out": None, "fault_log": None})
            result = runner.run(spec, write=False)
            row.append(result.iterations if result.outcome is SolveOutcome.CONVERGED else None)
            logger.info("tol %g, faults %s: %s", tol, fault, row[-1])
        counts.append(row)
    return IterationTable(list(tolerances), list(faults), counts)
