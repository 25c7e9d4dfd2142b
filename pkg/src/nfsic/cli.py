"""Command-line interface: ``nfsic <command> [flags]``.

Commands
    test      run a test on headerless CSV matrices X and Y
    null-sim  type-I error simulation on independent data
    power     rejection-rate simulation over a problem-parameter grid
    sweep-j   power versus number of random test locations
    gen       write a synthetic dataset as CSV
    witness   J=1 statistic surfaces over a 2D grid (1D X and Y)

Exit status reports whether the run succeeded, never the test decision.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict
from typing import Optional, Sequence

import numpy as np

from nfsic import __version__
from nfsic.baselines import hsic_test
from nfsic.errors import NfsicError
from nfsic.htest import CHI2, PERMUTATION
from nfsic.kernels import median_kernel
from nfsic.power import (
    NFSIC_MED,
    NFSIC_OPT,
    QHSIC,
    SimulationPlan,
    nfsic_med_test,
    power_vs_J_sweep,
    simulate_rejection_rate,
)
from nfsic.problems import KINDS, SG, ProblemSpec, generate
from nfsic.statistic import DEFAULT_GAMMA, JointSample, witness_surface
from nfsic.tuning import OPT_DEFAULT_GAMMA, TuningConfig, adaptive_test

TABLE_COLUMNS = ("grid_value", "trials", "rejections", "rate", "mean_runtime_ms")
WITNESS_COLUMNS = ("v", "w", "mu_xy_hat", "mu_x_mu_y_hat", "sigma_hat", "lambda_hat")


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# CSV ingestion / emission
# ---------------------------------------------------------------------------

def read_matrix(path: str, skip_header: bool = False) -> np.ndarray:
    """Parse a headerless numeric CSV; errors name the offending row and column."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}") from exc
    if skip_header and rows:
        rows = rows[1:]
        first_line = 2
    else:
        first_line = 1
    # a trailing blank line is not a data row
    while rows and not any(cell.strip() for cell in rows[-1]):
        rows.pop()
    if not rows:
        raise CliError(f"{path}: no data rows")
    width = len(rows[0])
    data = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + first_line
        if len(row) != width:
            raise CliError(f"{path}: row {line} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                raise CliError(f"{path}: row {line}, column {j + 1}: cannot parse {cell!r} as a number") from None
            if not math.isfinite(value):
                raise CliError(f"{path}: row {line}, column {j + 1}: non-finite value {cell!r}")
            data[i, j] = value
    return data


def write_matrix(path: str, data: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in np.atleast_2d(data):
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def render_csv(columns: Sequence[str], rows: Sequence[dict], meta: Optional[dict] = None) -> str:
    buf = io.StringIO()
    if meta is not None:
        buf.write(f"# nfsic {__version__}\n")
        buf.write("# config: " + json.dumps(meta, sort_keys=True) + "\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row[c]) for c in columns) + "\n")
    return buf.getvalue()


def render_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def emit(text: str, out_path: Optional[str]) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _provenance(args, argv) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return {"tool": "nfsic", "version": __version__, "argv": list(argv), "config": config,
            "seed": args.seed}


def _load_sample(args) -> JointSample:
    xs = read_matrix(args.x, args.skip_header)
    ys = read_matrix(args.y, args.skip_header)
    if xs.shape[0] != ys.shape[0]:
        raise CliError(f"row count mismatch: {args.x} has {xs.shape[0]} rows, {args.y} has {ys.shape[0]}")
    return JointSample(xs, ys)


def cmd_test(args, argv) -> int:
    sample = _load_sample(args)
    if args.threshold == CHI2 and args.method == "nfsic" and sample.n < 1000:
        print(f"hint: n={sample.n} < 1000; consider --threshold permutation for a "
              "better-calibrated threshold", file=sys.stderr)
    tuned = None
    if args.method == "qhsic":
        kx = median_kernel(sample.xs, seed=args.seed)
        ky = median_kernel(sample.ys, seed=args.seed)
        outcome = hsic_test(sample, kx, ky, args.alpha, args.perms, args.seed,
                            allow_large=args.allow_large)
        label = QHSIC
    elif args.optimize:
        cfg = TuningConfig(train_fraction=args.train_fraction, gamma=args.gamma, seed=args.seed,
                           threshold=args.threshold, num_perms=args.perms)
        outcome = adaptive_test(sample, args.j, args.alpha, cfg)
        tuned = outcome.tuned_params.to_dict()
        label = NFSIC_OPT
    else:
        outcome = nfsic_med_test(sample, args.j, args.alpha, args.seed, args.gamma,
                                 args.threshold, args.perms)
        label = NFSIC_MED
    result = {
        "method": label,
        "n": sample.n,
        "dx": sample.dx,
        "dy": sample.dy,
        "J": args.j if args.method == "nfsic" else None,
        **outcome.to_dict(),
    }
    if tuned is not None:
        result["tuned"] = tuned
    if args.output == "json":
        emit(render_json({**_provenance(args, argv), "result": result}), args.out)
    else:
        cols = ["method", "n", "dx", "dy", "J", "alpha", "statistic", "threshold", "p_value",
                "reject", "threshold_method"]
        row = dict(result)
        if tuned is not None:
            cols += ["sigma2_x", "sigma2_y"]
            row["sigma2_x"] = tuned["sigma2_x"]
            row["sigma2_y"] = tuned["sigma2_y"]
        emit(render_csv(cols, [row], _provenance(args, argv)), args.out)
    return 0


def cmd_gen(args, argv) -> int:
    problem = ProblemSpec(args.problem, dx=args.dx, dy=args.dy, omega=args.omega,
                          noise_sd=args.noise_sd)
    sample = generate(problem, args.n, args.seed)
    write_matrix(args.x, sample.xs)
    write_matrix(args.y, sample.ys)
    doc = {**_provenance(args, argv),
           "result": {"x": args.x, "y": args.y, "n": sample.n, "dx": sample.dx, "dy": sample.dy}}
    emit(render_json(doc), args.out)
    return 0


def _method_name(args) -> str:
    if args.method == "qhsic":
        return QHSIC
    return NFSIC_OPT if args.optimize else NFSIC_MED


def _parse_grid(text: str, cast=float) -> list:
    try:
        values = [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"cannot parse grid {text!r}: {exc}") from None
    if not values:
        raise CliError("grid must contain at least one value")
    return values


def _table_doc(args, argv, rows) -> str:
    out_rows = []
    for r in rows:
        d = asdict(r)
        if not args.timing:
            d["mean_runtime_ms"] = None
        out_rows.append(d)
    if args.output == "csv":
        return render_csv(TABLE_COLUMNS, out_rows, _provenance(args, argv))
    table = [{c: d[c] for c in TABLE_COLUMNS + ("failures",)} for d in out_rows]
    return render_json({**_provenance(args, argv), "table": table})


def _simulate(args, argv, problem: ProblemSpec) -> int:
    cast = int if args.grid_param in ("n", "dx", "dy", "d") else float
    grid = _parse_grid(args.grid, cast) if args.grid else ([args.n] if args.grid_param == "n" else None)
    if grid is None:
        raise CliError(f"--grid is required when --grid-param is {args.grid_param}")
    plan = SimulationPlan(
        problem=problem, method=_method_name(args), grid=grid, grid_param=args.grid_param,
        n=args.n, trials=args.trials, alpha=args.alpha, J=args.j, master_seed=args.seed,
        gamma=args.gamma, threshold=args.threshold, num_perms=args.perms,
        tuning=TuningConfig(train_fraction=args.train_fraction),
    )
    rows, _ = simulate_rejection_rate(plan, workers=args.workers)
    emit(_table_doc(args, argv, rows), args.out)
    return 0


def cmd_null_sim(args, argv) -> int:
    problem = ProblemSpec(args.problem, dx=args.dx, dy=args.dy, omega=args.omega, noise_sd=args.noise_sd)
    if not problem.is_null:
        raise CliError(f"null-sim needs a problem where independence holds (sg), got {args.problem}")
    return _simulate(args, argv, problem)


def cmd_power(args, argv) -> int:
    problem = ProblemSpec(args.problem, dx=args.dx, dy=args.dy, omega=args.omega, noise_sd=args.noise_sd)
    return _simulate(args, argv, problem)


def cmd_sweep_j(args, argv) -> int:
    problem = ProblemSpec(args.problem, dx=1, dy=1, omega=args.omega, noise_sd=args.noise_sd)
    grid = _parse_grid(args.j_grid, int)
    rows, _ = power_vs_J_sweep(problem, grid, args.n, args.trials, seed=args.seed,
                               alpha=args.alpha, gamma=args.gamma, workers=args.workers)
    emit(_table_doc(args, argv, rows), args.out)
    return 0


def cmd_witness(args, argv) -> int:
    sample = _load_sample(args)
    if sample.dx != 1 or sample.dy != 1:
        raise CliError(f"witness needs one-column X and Y files, got dx={sample.dx}, dy={sample.dy}")
    gx, gy = args.grid_size
    if gx < 1 or gy < 1:
        raise CliError("grid sizes must be >= 1")
    x, y = sample.xs[:, 0], sample.ys[:, 0]
    vs = np.linspace(x.min() - x.std(), x.max() + x.std(), gx)
    ws = np.linspace(y.min() - y.std(), y.max() + y.std(), gy)
    V, W = np.meshgrid(vs, ws, indexing="ij")
    kx = median_kernel(sample.xs, seed=args.seed)
    ky = median_kernel(sample.ys, seed=args.seed)
    surf = witness_surface(sample, kx, ky, V.ravel(), W.ravel(), args.gamma)
    rows = [
        {"v": float(v), "w": float(w), "mu_xy_hat": float(a), "mu_x_mu_y_hat": float(b),
         "sigma_hat": float(c), "lambda_hat": float(d)}
        for v, w, a, b, c, d in zip(V.ravel(), W.ravel(), surf.mu_xy, surf.mu_x_mu_y,
                                    surf.sigma, surf.lam)
    ]
    emit(render_csv(WITNESS_COLUMNS, rows, _provenance(args, argv)), args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _unit_interval(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be a finite value >= 0, got {text}")
    return v


def _common(p: argparse.ArgumentParser, output_default: str = "json") -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the output document here instead of stdout")
    p.add_argument("--output", choices=("json", "csv"), default=output_default)


def _test_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=_unit_interval, default=0.05)
    p.add_argument("--j", type=_positive_int, default=10)
    p.add_argument("--optimize", action="store_true")
    p.add_argument("--train-fraction", type=_unit_interval, default=0.5)
    p.add_argument("--threshold", choices=(CHI2, PERMUTATION), default=CHI2)
    p.add_argument("--perms", type=_positive_int, default=300)
    p.add_argument("--gamma", type=_nonneg_float, default=None,
                   help=f"ridge (default {DEFAULT_GAMMA:g}; {OPT_DEFAULT_GAMMA:g} with --optimize)")
    p.add_argument("--method", choices=("nfsic", "qhsic"), default="nfsic")


def _problem_flags(p: argparse.ArgumentParser, default_problem: Optional[str] = None) -> None:
    if default_problem is None:
        p.add_argument("problem", choices=KINDS)
    else:
        p.add_argument("--problem", choices=KINDS, default=default_problem)
    p.add_argument("--dx", type=_positive_int, default=1)
    p.add_argument("--dy", type=_positive_int, default=1)
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--noise-sd", type=_nonneg_float, default=0.3)


def _sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=_positive_int, default=4000)
    p.add_argument("--trials", type=_positive_int, default=300)
    p.add_argument("--grid", default=None, help="comma-separated grid values")
    p.add_argument("--grid-param", choices=("n", "omega", "dx", "dy", "d", "noise_sd"), default="n")
    p.add_argument("--workers", type=_positive_int, default=None,
                   help="parallel worker processes (default: NFSIC_THREADS or all CPUs)")
    p.add_argument("--timing", action="store_true",
                   help="fill mean_runtime_ms (makes the output run-dependent)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfsic", description="Adaptive kernel independence test.")
    parser.add_argument("--version", action="version", version=f"nfsic {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="test independence of X and Y given as CSV files")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--skip-header", action="store_true")
    p.add_argument("--allow-large", action="store_true", help="allow qhsic with n > 20000")
    _test_flags(p)
    _common(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("gen", help="write a synthetic dataset as headerless CSV")
    _problem_flags(p)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--x", required=True, help="output path for X")
    p.add_argument("--y", required=True, help="output path for Y")
    _common(p)
    p.set_defaults(func=cmd_gen)

    for name, func, default_problem in (("null-sim", cmd_null_sim, SG), ("power", cmd_power, "sin")):
        p = sub.add_parser(name, help="rejection-rate simulation")
        _problem_flags(p, default_problem)
        _sim_flags(p)
        _test_flags(p)
        _common(p, output_default="csv")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep-j", help="power versus number of random test locations")
    _problem_flags(p, "sin")
    p.set_defaults(omega=2.0)
    p.add_argument("--n", type=_positive_int, default=800)
    p.add_argument("--trials", type=_positive_int, default=200)
    p.add_argument("--j-grid", default="1,10,100")
    p.add_argument("--alpha", type=_unit_interval, default=0.05)
    p.add_argument("--gamma", type=_nonneg_float, default=DEFAULT_GAMMA)
    p.add_argument("--workers", type=_positive_int, default=None)
    p.add_argument("--timing", action="store_true")
    _common(p, output_default="csv")
    p.set_defaults(func=cmd_sweep_j)

    p = sub.add_parser("witness", help="J=1 statistic surfaces over a grid, as CSV")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--skip-header", action="store_true")
    p.add_argument("--grid-size", type=_positive_int, nargs=2, default=(50, 50), metavar=("NV", "NW"))
    p.add_argument("--gamma", type=_nonneg_float, default=DEFAULT_GAMMA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_witness)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    if isinstance(getattr(args, "grid_size", None), list):
        args.grid_size = tuple(args.grid_size)
    if getattr(args, "gamma", DEFAULT_GAMMA) is None:
        optimized = getattr(args, "optimize", False) and args.method == "nfsic"
        args.gamma = OPT_DEFAULT_GAMMA if optimized else DEFAULT_GAMMA
    try:
        return args.func(args, argv)
    except (CliError, NfsicError) as exc:
        print(f"nfsic {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"nfsic {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
