"""Command line interface: ``heatopt solve|table|cond|export``.

Exit codes: 0 success, 2 solver hit maxit without converging, 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from .config import ConfigError, load_config
from .geometry import SingularGeometryError
from .io import dump_matrices, export_vtk
from .kkt import KKTSystem, estimate_schur_condition, evaluate_cost, solve_system
from .tables import TABLES, TableIncomplete, run_table, write_table


def _load(path):
    try:
        return load_config(path)
    except OSError as exc:
        raise ConfigError(None, "cannot read %s: %s" % (path, exc.strerror)) from exc


def cmd_solve(args) -> int:
    cfg = _load(args.config)
    system = KKTSystem(cfg)
    if args.dump_matrices:
        dump_matrices(system, args.dump_matrices)
    fields, report = solve_system(system)
    if args.condition:
        est = estimate_schur_condition(cfg, system=system)
        report.condition = {"cond": est.cond, "lam_min": est.lam_min, "lam_max": est.lam_max,
                            "lanczos_iterations": est.iterations}
    track, reg, J = evaluate_cost(fields, system)
    out = report.to_dict()
    out["cost"] = {"tracking": track, "regularization": reg, "total": J}
    if args.slice_times:
        system.P_solver.dump_slice_times(args.slice_times)
    text = json.dumps(out, indent=2)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    print(text if args.verbose else
          "iterations = %d\nconverged = %s\ncost = %.10g" % (report.iterations, report.converged, J))
    return 0 if report.converged else 2


def cmd_table(args) -> int:
    progress = None
    if args.verbose:
        progress = lambda r: print("  %s" % {k: r[k] for k in ("level", "degree", "alpha", "kappa",
                                                                "value", "reference")},
                                   file=sys.stderr)
    incomplete = None
    try:
        rows = run_table(args.id, max_level=args.max_level, max_degree=args.max_degree,
                         progress=progress)
    except TableIncomplete as exc:
        rows, incomplete = exc.rows, exc.reason
    write_table(rows, args.out or sys.stdout, incomplete)
    if incomplete:
        print("error: %s" % incomplete, file=sys.stderr)
        return 1
    return 0 if all(r["converged"] for r in rows) else 2


def cmd_cond(args) -> int:
    cfg = _load(args.config)
    t0 = time.perf_counter()
    est = estimate_schur_condition(cfg, n_iters=args.iterations)
    print("cond = %.6g\nlam_min = %.6g\nlam_max = %.6g\nlanczos_iterations = %d\nseconds = %.3f"
          % (est.cond, est.lam_min, est.lam_max, est.iterations, time.perf_counter() - t0))
    return 0


def _resolution(text):
    try:
        res = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected T,NX,NY integers")
    if len(res) != 3 or min(res) < 2:
        raise argparse.ArgumentTypeError("expected three integers >= 2")
    return res


def cmd_export(args) -> int:
    cfg = _load(args.config)
    system = KKTSystem(cfg)
    fields, report = solve_system(system)
    path = export_vtk(fields, args.out, args.res)
    print("wrote %s (iterations = %d)" % (path, report.iterations))
    return 0 if report.converged else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heatopt", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one configuration")
    p.add_argument("config")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--condition", action="store_true", help="also estimate cond(P^-1 S)")
    p.add_argument("--slice-times", help="CSV of per-eigenvalue spatial solve times")
    p.add_argument("--dump-matrices", metavar="DIR", help="Matrix Market dump of factors")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("table", help="regenerate a benchmark table as CSV")
    p.add_argument("id", type=int, choices=TABLES)
    p.add_argument("--max-level", type=int, default=4)
    p.add_argument("--max-degree", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("cond", help="Lanczos estimate of cond(P^-1 S)")
    p.add_argument("config")
    p.add_argument("--iterations", type=int, default=60)
    p.set_defaults(func=cmd_cond)

    p = sub.add_parser("export", help="solve and write a VTK file")
    p.add_argument("config")
    p.add_argument("--res", type=_resolution, default=(17, 17, 17), help="T,NX,NY")
    p.add_argument("--out", default="solution.vtk")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # usage errors are input errors (1); 2 is reserved for maxit
        return 1 if exc.code else 0
    try:
        return args.func(args)
    except (ConfigError, SingularGeometryError, ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
