"""FT-GMRES experiment harness

Runs FT-GMRES, restarted GMRES or plain GMRES on a test problem under a
fault policy and writes the convergence history as CSV.

    python main.py --problem diag:10000:10 --solver ftgmres --s 50 --t 10 \\
        --fault pattern:1,0,1,0,0,0,0,0,0,0 --out ft.csv
"""

import argparse
import sys

import config
from workflow.orchestrator import ExperimentRunner, ExperimentSpec, HarnessError
from workflow.tables import table_iterations


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="FT-GMRES experiment harness")
    parser.add_argument("--problem", default="diag:10000:10", help="diag:N:DECADES or mm:PATH")
    parser.add_argument("--rhs", default="aones", help="aones or uniform:SEED")
    parser.add_argument("--solver", default="ftgmres", choices=["ftgmres", "rgmres", "gmres"])
    parser.add_argument("--s", type=int, default=50, help="inner iterations / restart length")
    parser.add_argument("--t", type=int, default=10, help="outer iterations / restart cycles")
    parser.add_argument("--tol", type=float, default=1e-8, help="outer relative residual tolerance")
    parser.add_argument("--fault", default="none", help="none, pattern:0,0,1 or poisson:RATE:SEED")
    parser.add_argument("--pdetect", type=float, default=config.DEFAULT_P_DETECT)
    parser.add_argument("--precond", default="none", choices=["none", "jacobi", "ilu0"])
    parser.add_argument("--refresh", default="always", choices=["always", "ondetect"])
    parser.add_argument("--recovery", default="retry", choices=["retry", "randomz", "lastgood"])
    parser.add_argument("--schedule", default="decreasing", choices=["decreasing", "constant"])
    parser.add_argument("--inner-tol", type=float, default=None)
    parser.add_argument("--time-step", type=float, default=config.DEFAULT_TIME_STEP)
    parser.add_argument("--log-capacity", type=int, default=config.DEFAULT_LOG_CAPACITY)
    parser.add_argument("--no-guard", action="store_true", help="disable the first-inner-solve guard")
    parser.add_argument("--reliable-basis", action="store_true", help="keep inner Krylov vectors reliable")
    parser.add_argument("--out", default=None, help="convergence CSV path")
    parser.add_argument("--fault-log", default=None, help="fault event CSV path")
    parser.add_argument("--table-tols", default=None, help="comma-separated tolerances for table mode")
    parser.add_argument("--table-faults", default=None, help="semicolon-separated fault flags for table mode")
    parser.add_argument("--log-level", default=None)
    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    return ExperimentSpec(
        problem=args.problem,
        rhs=args.rhs,
        solver=args.solver,
        s=args.s,
        t=args.t,
        outer_tol=args.tol,
        fault=args.fault,
        p_detect=args.pdetect,
        time_step=args.time_step,
        log_capacity=args.log_capacity,
        precond=args.precond,
        refresh=args.refresh,
        recovery=args.recovery,
        schedule=args.schedule,
        first_solve_guard=not args.no_guard,
        inner_vectors_failable=not args.reliable_basis,
        inner_tol=args.inner_tol,
        out=args.out,
        fault_log=args.fault_log,
    )


def run_table(args: argparse.Namespace, spec: ExperimentSpec) -> None:
    if args.table_tols is None or args.table_faults is None:
        raise HarnessError("table mode needs both --table-tols and --table-faults")
    if spec.solver.value != "ftgmres":
        raise HarnessError("table mode counts FT-GMRES outer iterations; use --solver ftgmres")
    tolerances = [float(t) for t in args.table_tols.split(",") if t.strip()]
    faults = [f.strip() for f in args.table_faults.split(";") if f.strip()]

    print("\n" + "=" * 70)
    print(f"📋 OUTER ITERATIONS TO CONVERGENCE on {spec.problem} (s={spec.s}, t={spec.t})")
    print("=" * 70)
    table = table_iterations(spec, tolerances, faults)
    print(table.render())
    if spec.out is not None:
        with open(spec.out, "w", newline="") as sink:
            table.write_csv(sink)
        print(f"\n📊 Table written → {spec.out}")
    print("=" * 70 + "\n")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config.configure_logging(args.log_level)
    try:
        spec = spec_from_args(args)
        if args.table_tols is not None or args.table_faults is not None:
            run_table(args, spec)
        else:
            ExperimentRunner().run(spec)
    except (HarnessError, ValueError, OSError) as exc:
        print(f"❌ Error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
