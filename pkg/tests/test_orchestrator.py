import io

import numpy as np
import pytest
from pydantic import ValidationError

import main
from solvers.base_solver import SolveOutcome
from tests.conftest import random_sparse_dense
from tools.matrix_market import write_matrix_market
from tools.sparse_kernels import CsrMatrix
from workflow.orchestrator import (
    CSV_HEADER,
    ConvergenceRecord,
    ExperimentRunner,
    ExperimentSpec,
    HarnessError,
    SolverKind,
    load_problem,
    write_records,
)
from workflow.tables import IterationTable, table_iterations

FIRST_THIRD_PATTERN = "pattern:1,0,1,0,0,0,0,0,0,0"
FAULT_RATE_PATTERNS = {
    "none": "none",
    "1/10": "pattern:0,0,0,0,0,0,0,0,0,1",
    "3/10": "pattern:0,0,0,0,1,0,0,1,0,1",
    "5/10": "pattern:1,0,1,0,1,0,0,1,0,1",
}

# true relative residuals after t=20 on diag:10000:10, s=50
PINNED_FINAL_RESIDUALS = {"none": 3.564e-06, "1/10": 4.061e-06, "3/10": 4.155e-06, "5/10": 4.154e-06}


@pytest.fixture
def runner() -> ExperimentRunner:
    return ExperimentRunner(verbose=False)


@pytest.fixture
def mm_problem(tmp_path):
    dense = random_sparse_dense(np.random.default_rng(8), 8, density=1.0)
    path = tmp_path / "eight.mtx"
    with open(path, "w") as sink:
        write_matrix_market(CsrMatrix.from_dense(dense), sink)
    return f"mm:{path}", dense


def _csv_rows(path) -> list[list[str]]:
    return [line.split(",") for line in path.read_text().splitlines()]


def test_load_diagonal_problem():
    A, b = load_problem("diag:5:4", "aones")
    assert A.nrows == 5
    np.testing.assert_allclose(b, A.diagonal())


def test_load_uniform_rhs_is_seeded():
    _, b1 = load_problem("diag:5:4", "uniform:3")
    _, b2 = load_problem("diag:5:4", "uniform:3")
    np.testing.assert_array_equal(b1, b2)


@pytest.mark.parametrize("problem", ["diag:5", "diag:1:4", "diag:x:y"])
def test_bad_diagonal_problems(problem):
    with pytest.raises(HarnessError):
        load_problem(problem, "aones")


def test_spec_validation():
    with pytest.raises(ValidationError):
        ExperimentSpec(problem="laplace:10")
    with pytest.raises(ValidationError):
        ExperimentSpec(rhs="zeros")
    with pytest.raises(ValidationError):
        ExperimentSpec(solver="cg")


def test_plain_gmres_on_small_system(runner, mm_problem):
    problem, _ = mm_problem
    spec = ExperimentSpec(problem=problem, solver=SolverKind.GMRES, s=50, t=10, outer_tol=1e-12)
    result = runner.run(spec)
    assert result.outcome is SolveOutcome.CONVERGED
    assert result.true_residual <= 1e-12
    assert result.iterations <= 8


def test_ft_gmres_writes_one_record_per_outer_iteration(runner, tmp_path):
    out = tmp_path / "ft.csv"
    spec = ExperimentSpec(problem="diag:1000:10", s=20, t=10, outer_tol=1e-14, fault=FIRST_THIRD_PATTERN, out=out)
    result = runner.run(spec)
    rows = _csv_rows(out)
    assert tuple(rows[0]) == CSV_HEADER
    assert [int(r[1]) for r in rows[1:]] == list(range(1, len(rows)))
    assert len(rows) - 1 == result.iterations == 10
    assert all(r[0] == "ftgmres" for r in rows[1:])
    assert int(rows[-1][4]) == result.fault_counters.injected > 0
    assert [int(r[2]) for r in rows[1:]] == sorted(int(r[2]) for r in rows[1:])


def test_restarted_gmres_records_every_inner_iteration(runner, tmp_path):
    out = tmp_path / "rgmres.csv"
    spec = ExperimentSpec(
        problem="diag:500:8", solver=SolverKind.RESTARTED_GMRES, s=10, t=4, outer_tol=1e-14, fault=FIRST_THIRD_PATTERN, out=out
    )
    result = runner.run(spec)
    rows = _csv_rows(out)[1:]
    assert [int(r[2]) for r in rows] == list(range(1, len(rows) + 1))
    assert {int(r[1]) for r in rows} == {1, 2, 3, 4}
    assert result.iterations == 40
    assert result.fault_counters.injected > 0


def test_csv_is_byte_identical_across_reruns(runner, tmp_path):
    outputs = []
    for name in ("a.csv", "b.csv"):
        spec = ExperimentSpec(
            problem="diag:300:6", s=10, t=5, fault="poisson:1000:9", time_step=5.0, out=tmp_path / name
        )
        runner.run(spec)
        outputs.append((tmp_path / name).read_bytes())
    assert outputs[0] == outputs[1]


def test_fault_log_csv(runner, tmp_path):
    log_path = tmp_path / "faults.csv"
    spec = ExperimentSpec(problem="diag:300:6", s=10, t=3, fault="pattern:1", fault_log=log_path)
    result = runner.run(spec)
    lines = log_path.read_text().splitlines()
    assert lines[0] == "logical_time,region,element,bit,detected"
    assert len(lines) - 1 == result.fault_counters.injected
    assert all(line.split(",")[3] == "add_one" for line in lines[1:])


def test_restart_length_must_be_positive(runner):
    with pytest.raises(HarnessError):
        runner.run(ExperimentSpec(problem="diag:10:2", solver=SolverKind.RESTARTED_GMRES, s=0))


def test_write_records_uses_repr_floats():
    sink = io.StringIO()
    write_records([ConvergenceRecord("gmres", 1, 3, 0.1, 2, 1)], sink)
    assert sink.getvalue().splitlines() == [",".join(CSV_HEADER), "gmres,1,3,0.1,2,1"]


def test_summary_is_printed(mm_problem, capsys):
    problem, _ = mm_problem
    ExperimentRunner().run(ExperimentSpec(problem=problem, s=5, t=3))
    printed = capsys.readouterr().out
    assert "OUTCOME:" in printed
    assert "Faults injected: 0" in printed


def test_loose_tolerance_needs_one_outer_iteration_without_faults():
    table = table_iterations(
        ExperimentSpec(problem="diag:1000:10", s=50, t=5), [1e-1], ["none", FIRST_THIRD_PATTERN]
    )
    assert table.count(1e-1, "none") == 1
    assert len(table.counts) == 1 and len(table.counts[0]) == 2
    assert all(c is None or 1 <= c <= 5 for c in table.counts[0])


def test_iteration_table_rendering():
    table = IterationTable([1e-2, 1e-4], ["none", "pattern:1"], [[1, 2], [3, None]])
    sink = io.StringIO()
    table.write_csv(sink)
    assert sink.getvalue().splitlines() == ["tol,none,pattern:1", "0.01,1,2", "0.0001,3,-"]
    assert table.render().splitlines()[2].split() == ["0.0001", "3", "-"]


def test_cli_runs_and_writes_csv(tmp_path, mm_problem):
    problem, _ = mm_problem
    out = tmp_path / "cli.csv"
    status = main.main(["--problem", problem, "--solver", "gmres", "--s", "10", "--t", "2", "--out", str(out)])
    assert status == 0
    assert out.read_text().startswith(",".join(CSV_HEADER))


def test_cli_missing_matrix_exits_with_status_2(tmp_path, capsys):
    status = main.main(["--problem", f"mm:{tmp_path / 'missing.mtx'}"])
    assert status == 2
    assert "Error" in capsys.readouterr().err


def test_cli_oversized_matrix_market_header_exits_with_status_2(tmp_path, capsys):
    path = tmp_path / "huge.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real general\n99999999999999999999 2 1\n1 1 1.0\n")
    assert main.main(["--problem", f"mm:{path}"]) == 2
    assert "line 2:" in capsys.readouterr().err


def test_cli_table_mode_needs_both_flags(capsys):
    assert main.main(["--problem", "diag:10:2", "--table-tols", "1e-2"]) == 2


@pytest.mark.slow
def test_ft_gmres_beats_restarted_gmres_under_the_same_faults(runner):
    base = dict(problem="diag:10000:10", s=50, t=10, fault=FIRST_THIRD_PATTERN)
    ft = runner.run(ExperimentSpec(solver=SolverKind.FT_GMRES, **base))
    restarted = runner.run(ExperimentSpec(solver=SolverKind.RESTARTED_GMRES, **base))
    assert len(ft.records) == 10
    assert ft.true_residual * 10.0 <= restarted.true_residual


@pytest.fixture(scope="module")
def fault_rate_sweep():
    runner = ExperimentRunner(verbose=False)
    base = dict(problem="diag:10000:10", s=50, t=20, outer_tol=1e-14)
    return {rate: runner.run(ExperimentSpec(fault=flag, **base)) for rate, flag in FAULT_RATE_PATTERNS.items()}


@pytest.mark.slow
def test_fault_rate_sweep_matches_pinned_residuals(fault_rate_sweep):
    for rate, result in fault_rate_sweep.items():
        assert result.true_residual == pytest.approx(PINNED_FINAL_RESIDUALS[rate], rel=1e-3)
        assert fault_rate_sweep["none"].true_residual <= result.true_residual
    assert len(fault_rate_sweep["none"].records) == 20
    assert fault_rate_sweep["none"].fault_counters.injected == 0
    assert all(fault_rate_sweep[r].fault_counters.injected > 0 for r in ("1/10", "3/10", "5/10"))


@pytest.mark.slow
def test_convergence_degrades_gradually_with_fault_rate(fault_rate_sweep):
    histories = {rate: [r.resid_rel for r in result.records] for rate, result in fault_rate_sweep.items()}
    patterns = list(histories)
    target = histories["none"][9]

    def outer_to_target(history: list[float]) -> int | None:
        return next((i + 1 for i, r in enumerate(history) if r <= target), None)

    baseline = outer_to_target(histories["none"])
    for pattern in patterns[1:]:
        reached = outer_to_target(histories[pattern])
        assert reached is not None
        assert reached <= 2 * baseline
