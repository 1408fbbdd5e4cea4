"""Command-line interface.

Subcommands:

* ``generate``: write a synthetic logistic dataset (CSV + binary) with a
  JSON report of its measured coherence and condition number.
* ``solve``: run the averaged stochastic Newton solver on a dataset file,
  writing a per-iteration trace CSV and printing a JSON summary.
* ``bench``: execute an experiment grid from a JSON config and write the
  aggregated median/IQR table as CSV and JSON.
* ``diag``: evaluate the transition-point calculators for a parameter
  bundle, with substitute-back self-checks and optional rate curves.
* ``rates``: turn a trace file into consecutive error ratios for plotting.

Exit codes: 0 ok, 1 I/O or execution failure, 2 usage, 3 oracle/objective
capability mismatch, 4 theory precondition violation.  HESSAVG_JOBS sets
the default for ``bench --jobs``.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import bench, theory
from .averaging import LogPower, Power, Uniform, psi_bound
from .datagen import DataGenConfig, generate
from .oracles import CapabilityError
from .problem import RegularizedLogistic, solve_reference
from .solver import SolverConfig, run


def _strip_known_suffix(path: str) -> str:
    for suffix in (".csv", ".bin", ".json"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def cmd_generate(args) -> int:
    cfg = DataGenConfig(n=args.n, d=args.d, coherence_mode=args.coherence,
                        kappa_A=args.kappa, reg_nu=args.reg_nu,
                        seed=args.seed)
    ds, report = generate(cfg)
    base = _strip_known_suffix(args.out)
    bench.save_dataset_csv(base + ".csv", ds)
    bench.save_dataset_binary(base + ".bin", ds)
    sidecar = {
        "config": {"n": args.n, "d": args.d, "coherence": args.coherence,
                   "kappa": args.kappa, "reg_nu": args.reg_nu,
                   "seed": args.seed},
        "measured_coherence": report.measured_coherence,
        "measured_condition": report.measured_condition,
        "x_true": list(report.x_true),
    }
    with open(base + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    print("wrote %s.csv, %s.bin, %s.json (coherence %.4g, condition %.6g)"
          % (base, base, base, report.measured_coherence,
             report.measured_condition))
    return 0


def cmd_solve(args) -> int:
    ds = bench.load_dataset(args.data)
    obj = RegularizedLogistic(ds, args.reg_nu)
    x0 = np.zeros(obj.dim)
    ref = solve_reference(obj, x0)
    cfg = SolverConfig(beta=args.beta, rho_backtrack=args.rho,
                       max_iter=args.max_iter, tol_hstar=args.tol,
                       oracle=bench.oracle_for_name(args.oracle, args.s),
                       weights=bench.weights_for_variant(args.variant),
                       seed=args.seed)
    result = run(obj, x0, cfg, ref)
    if args.trace_out:
        bench.save_trace_csv(args.trace_out, result.records)
    summary = {
        "iterations_to_tol": result.iterations_to_tol,
        "converged": result.converged,
        "final_hstar_error": result.records[-1].hstar_error,
        "final_f": result.records[-1].f_value,
        "records": len(result.records),
        "trace": args.trace_out,
    }
    print(json.dumps(summary))
    return 0


def cmd_bench(args) -> int:
    with open(args.grid) as fh:
        grid = bench.ExperimentGrid.from_dict(json.load(fh))
    outcome = bench.run_grid(grid, jobs=args.jobs)
    base = _strip_known_suffix(args.out)
    with open(base + ".csv", "w") as fh:
        fh.write(bench.rows_to_csv(grid, outcome["rows"]))
    payload = {"grid": grid.__dict__, "rows": outcome["rows"],
               "runs": outcome["runs"]}
    with open(base + ".json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    failures = sum(1 for rec in outcome["runs"] if rec["error"])
    print("wrote %s.csv and %s.json (%d rows, %d runs, %d failures)"
          % (base, base, len(outcome["rows"]), len(outcome["runs"]),
             failures))
    return 0


def _diag_weights(args):
    if args.weights == "uniform":
        return Uniform()
    if args.weights == "power":
        return Power(args.power_p)
    return LogPower()


def cmd_diag(args) -> int:
    try:
        seq = _diag_weights(args)
        psi = args.psi if args.psi is not None else psi_bound(seq, 1000)
        inputs = theory.TheoryInputs(
            kappa=args.kappa, lambda_min=args.lambda_min,
            upsilon=args.upsilon, epsilon=args.epsilon, delta=args.delta,
            d=args.d, radius_nu=args.radius_nu,
            lipschitz_L=args.lipschitz, f0_gap=args.f0_gap, psi=psi,
            weights=seq, beta=args.beta, rho=args.rho)
        report = theory.transition_report(inputs)
        checks = theory.substitute_back_checks(inputs, report)
    except (ValueError, RuntimeError) as exc:
        print("theory precondition: %s" % exc, file=sys.stderr)
        return 4
    payload = theory.report_to_json_dict(report)
    payload["psi"] = psi
    payload["checks"] = checks
    payload["self_check"] = "pass" if all(checks.values()) else "fail"
    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if args.curves_out:
        offsets = np.unique(np.round(np.logspace(0.0, 6.0, 120)))
        offsets = np.concatenate(([0.0], offsets))
        lines = [bench.CSV_VERSION, "t,rho_t,theta_t"]
        for t in offsets:
            lines.append("%d,%.17g,%.17g" % (
                int(t),
                theory.rho_t(inputs, report.t_total, report.j_transition, t),
                theory.theta_t(inputs, report.i_total,
                               report.u_transition, t)))
        with open(args.curves_out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def cmd_rates(args) -> int:
    columns = bench.load_trace_csv(args.trace)
    if "hstar_error" not in columns:
        raise ValueError("%s: no hstar_error column" % args.trace)
    errors = columns["hstar_error"]
    if errors.size < 2:
        print("error: trace has fewer than 2 rows", file=sys.stderr)
        return 2
    idx, ratios = bench.ratio_series(errors)
    lines = [bench.CSV_VERSION, "t,ratio"]
    for i, r in zip(idx, ratios):
        lines.append("%d,%.17g" % (i, r))
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("wrote %s (%d ratios)" % (args.out, len(ratios)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hessavg",
        description="Stochastic Newton optimization with online weighted "
                    "Hessian averaging: dataset generation, solving, "
                    "benchmark grids, and rate diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic logistic dataset")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--d", type=int, default=100)
    g.add_argument("--coherence", choices=("low", "high"), default="low")
    g.add_argument("--kappa", type=float, default=100.0,
                   help="target condition number of the data matrix")
    g.add_argument("--reg-nu", type=float, default=1e-3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True,
                   help="output base path (writes .csv, .bin, .json)")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="run the solver on a dataset file")
    s.add_argument("--data", required=True)
    s.add_argument("--oracle", choices=bench.ORACLES, default="subsample")
    s.add_argument("--s", type=int, default=0,
                   help="subsample/sketch size (required unless exact)")
    s.add_argument("--variant", choices=bench.VARIANTS, default="unifavg")
    s.add_argument("--beta", type=float, default=1e-4)
    s.add_argument("--rho", type=float, default=0.5)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=999)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--reg-nu", type=float, default=1e-3,
                   help="l2 strength of the objective built from the data")
    s.add_argument("--trace-out", default=None,
                   help="per-iteration trace CSV path")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run an experiment grid")
    b.add_argument("--grid", required=True, help="grid config JSON")
    b.add_argument("--out", required=True,
                   help="output base path (writes .csv and .json)")
    b.add_argument("--jobs", type=int,
                   default=int(os.environ.get("HESSAVG_JOBS", "1")))
    b.set_defaults(func=cmd_bench)

    dg = sub.add_parser("diag", help="transition-point calculators")
    dg.add_argument("--kappa", type=float, default=10.0)
    dg.add_argument("--lambda-min", type=float, default=1e-3)
    dg.add_argument("--upsilon", type=float, default=0.1)
    dg.add_argument("--epsilon", type=float, default=0.5)
    dg.add_argument("--delta", type=float, default=0.01)
    dg.add_argument("--d", type=int, default=100)
    dg.add_argument("--radius-nu", type=float, default=0.5)
    dg.add_argument("--beta", type=float, default=1e-4)
    dg.add_argument("--rho", type=float, default=0.5)
    dg.add_argument("--lipschitz", type=float, default=1.0)
    dg.add_argument("--f0-gap", type=float, default=1.0)
    dg.add_argument("--psi", type=float, default=None,
                    help="growth bound; computed from the weights if omitted")
    dg.add_argument("--weights", choices=("uniform", "power", "logpower"),
                    default="uniform")
    dg.add_argument("--power-p", type=float, default=2.0)
    dg.add_argument("--out", default=None, help="report JSON path (stdout if omitted)")
    dg.add_argument("--curves-out", default=None,
                    help="sampled rho_t/theta_t curve CSV path")
    dg.set_defaults(func=cmd_diag)

    r = sub.add_parser("rates", help="consecutive error ratios from a trace")
    r.add_argument("--trace", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rates)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CapabilityError as exc:
        print("capability error: %s" % exc, file=sys.stderr)
        return 3
    except OSError as exc:
        print("i/o error: %s" % exc, file=sys.stderr)
        return 1
    except ValueError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 4 if args.command == "diag" else 2
    except RuntimeError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 4 if args.command == "diag" else 1


if __name__ == "__main__":
    sys.exit(main())
