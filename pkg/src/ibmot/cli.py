"""Command-line front end.

Subcommands: ``check`` (convex order), ``convexify`` (order repair),
``solve`` (projected gradient ascent), ``evaluate`` (objective of a
given coupling), ``simulate`` (Monte-Carlo oracle).  Reports are JSON
with a ``version`` field; path artifacts are CSV.  Exit codes: 0
success, 2 argument/input errors, 3 infeasible marginals, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .convexify import convexify_pair
from .coupling import (
    Coupling,
    InfeasibleMarginalsError,
    MartingaleProjector,
    ProjectionError,
    read_coupling_csv,
    read_coupling_json,
    validate_coupling,
    write_coupling_csv,
)
from .fam import brownian_rap
from .measures import (
    convex_order_check,
    make_measure,
    mean,
    quantile_midpoints,
    read_measure,
    second_moment,
    write_measure,
)
from .objective import Evaluator, QuadratureSpec, k_upper_bound
from .optimizer import solve
from .simulate import innovations_path, open_uniform_grid, simulate_fam

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


def _emit(payload: dict, path: str | None) -> None:
    payload = {"version": __version__, **payload}
    text = json.dumps(payload, indent=2) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _fail(exc: Exception, code: int) -> int:
    error = {"version": __version__, "error": {"type": type(exc).__name__, "message": str(exc)}}
    sys.stderr.write(json.dumps(error) + "\n")
    return code


def _load_measure(path: str, discretize: int | None):
    m = read_measure(path)
    if discretize:
        m = quantile_midpoints(m, discretize)
    return m


def _add_measure_args(sub, with_discretize=True):
    sub.add_argument("mu", help="first marginal (.json or .csv)")
    sub.add_argument("nu", help="second marginal (.json or .csv)")
    if with_discretize:
        sub.add_argument(
            "--discretize", type=int, default=None, metavar="N",
            help="reduce each marginal to N quantile midpoints",
        )


def _add_rap_args(sub):
    sub.add_argument("--t0", type=float, default=0.0, help="interval start (default 0)")
    sub.add_argument("--t1", type=float, default=1.0, help="interval end (default 1)")
    sub.add_argument("--hermite", type=int, default=None, help="noise-integral node count")
    sub.add_argument("--time-nodes", type=int, default=None, help="time-integral node count")


def _quad(rap, args):
    kwargs = {}
    if args.hermite:
        kwargs["n_hermite"] = args.hermite
    if args.time_nodes:
        kwargs["n_time"] = args.time_nodes
    return QuadratureSpec.build(rap, **kwargs)


def _load_coupling(path: str) -> Coupling:
    p = Path(path)
    if p.suffix.lower() == ".json":
        return read_coupling_json(p)
    return read_coupling_csv(p)


def cmd_check(args) -> int:
    mu = _load_measure(args.mu, args.discretize)
    nu = _load_measure(args.nu, args.discretize)
    report = convex_order_check(mu, nu, tol=args.tol)
    _emit(
        {
            "ordered": bool(report.ordered),
            "mean_gap": report.mean_gap,
            "min_Q": report.min_Q,
            "argmin_Q": report.argmin_Q.tolist(),
            "Q_at_1": report.Q_at_1,
            "tol": args.tol,
        },
        args.report,
    )
    return EXIT_OK


def cmd_convexify(args) -> int:
    mu = _load_measure(args.mu, args.discretize)
    nu = _load_measure(args.nu, args.discretize)
    result = convexify_pair(mu, nu, alpha=args.alpha, beta=args.beta)
    write_measure(result.mu_tilde, args.out_mu)
    write_measure(result.nu_tilde, args.out_nu)
    _emit(
        {
            "cost": result.cost,
            "alpha": result.alpha,
            "beta": result.beta,
            "changed": result.cost > 0,
            "out_mu": str(args.out_mu),
            "out_nu": str(args.out_nu),
        },
        args.report,
    )
    return EXIT_OK


def _maybe_repair(mu, nu, args):
    report = convex_order_check(mu, nu)
    if report.ordered:
        return mu, nu, {"applied": False, "cost": 0.0}
    if args.no_repair:
        raise InfeasibleMarginalsError(
            "marginals are not in convex order and --no-repair was given"
        )
    result = convexify_pair(mu, nu, alpha=args.alpha, beta=args.beta)
    return result.mu_tilde, result.nu_tilde, {
        "applied": True, "cost": result.cost, "alpha": args.alpha, "beta": args.beta,
    }


def cmd_solve(args) -> int:
    mu = _load_measure(args.mu, args.discretize)
    nu = _load_measure(args.nu, args.discretize)
    rap = brownian_rap(args.t0, args.t1)
    mu, nu, repair = _maybe_repair(mu, nu, args)
    quad = _quad(rap, args)
    overrides = {}
    if args.max_iters is not None:
        overrides["max_theta_cap"] = args.max_iters
    result = solve(
        mu, nu, rap, epsilon=args.epsilon, overrides=overrides or None,
        seed=args.seed, quad=quad,
    )
    if args.out:
        write_coupling_csv(result.coupling_avg, args.out)
    residuals = validate_coupling(result.coupling_avg, mu, nu)
    _emit(
        {
            "value": result.value,
            "best_iterate_value": result.best_iterate_value,
            "epsilon": args.epsilon,
            "iterations": len(result.history.value),
            "params": {
                "grad_bound": result.params_used.grad_bound,
                "delta": result.params_used.delta,
                "lam": result.params_used.lam,
                "theta": result.params_used.theta,
                "theta_effective": result.params_used.theta_effective,
            },
            "upper_bound": k_upper_bound(mu, nu, rap),
            "max_residual": residuals.max_residual,
            "repair": repair,
            "warnings": result.warnings,
            "seed": args.seed,
            "out": args.out,
        },
        args.report,
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    coupling = _load_coupling(args.coupling)
    rap = brownian_rap(args.t0, args.t1)
    quad = _quad(rap, args)
    evaluator = Evaluator(rap, quad, coupling.col_support, cache=True)
    value = evaluator.value(coupling.p)
    variance_form = evaluator.variance_value(coupling.p)
    mu = make_measure(coupling.row_support, coupling.p.sum(axis=1))
    nu = make_measure(coupling.col_support, coupling.p.sum(axis=0))
    residuals = validate_coupling(coupling, mu, nu)
    nodes = [
        {
            "t": float(t),
            "inner_error": evaluator.inner_error_at(coupling.p, float(t)),
            "kernel": float(w),
        }
        for t, w in zip(quad.t_nodes, quad.w_nodes)
    ]
    _emit(
        {
            "objective": value,
            "variance_form": variance_form,
            "upper_bound": float(
                np.sqrt(
                    max((rap.t1 - rap.t0) * (second_moment(nu) - second_moment(mu)), 0.0)
                )
            ),
            "marginal_means": [mean(mu), mean(nu)],
            "max_residual": residuals.max_residual,
            "nodes": nodes,
        },
        args.report,
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    coupling = _load_coupling(args.coupling)
    rap = brownian_rap(args.t0, args.t1)
    grid = open_uniform_grid(rap, args.grid)
    bundle, estimate = simulate_fam(coupling, rap, grid, args.paths, seed=args.seed)
    innovations_path(bundle, coupling, rap)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path_id", "t", "I", "M", "W"])
            limit = min(bundle.n_paths, args.max_paths_out)
            for pid in range(limit):
                for k, t in enumerate(bundle.grid):
                    writer.writerow(
                        [
                            pid,
                            repr(float(t)),
                            repr(float(bundle.i_paths[pid, k])),
                            repr(float(bundle.m_paths[pid, k])),
                            repr(float(bundle.w_paths[pid, k])),
                        ]
                    )
    w_final = bundle.w_final
    _emit(
        {
            "estimate": estimate.value,
            "std_error": estimate.std_error,
            "bias_bound": estimate.bias_bound,
            "n_paths": estimate.n_paths,
            "n_grid": estimate.n_grid,
            "innovations": {
                "var_w_final": float(np.var(w_final, ddof=1)),
                "mean_w_final": float(np.mean(w_final)),
                "mean_x1_w_final": float(np.mean(bundle.x1 * w_final)),
            },
            "seed": args.seed,
            "out": args.out,
        },
        args.report,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ibmot",
        description="Information-based martingale optimal transport on empirical marginals",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("check", help="verify convex order of two measures")
    _add_measure_args(sub)
    sub.add_argument("--tol", type=float, default=1e-9)
    sub.add_argument("--report", default=None, help="write the JSON report here")
    sub.set_defaults(func=cmd_check)

    sub = subs.add_parser("convexify", help="repair a pair into convex order")
    _add_measure_args(sub)
    sub.add_argument("--alpha", type=float, default=2.0)
    sub.add_argument("--beta", type=float, default=2.0)
    sub.add_argument("--out-mu", required=True, help="repaired first marginal (JSON)")
    sub.add_argument("--out-nu", required=True, help="repaired second marginal (JSON)")
    sub.add_argument("--report", default=None)
    sub.set_defaults(func=cmd_convexify)

    sub = subs.add_parser("solve", help="find the eps-optimal martingale coupling")
    _add_measure_args(sub)
    _add_rap_args(sub)
    sub.add_argument("--epsilon", type=float, default=0.01)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--max-iters", type=int, default=None, help="iteration cap")
    sub.add_argument("--alpha", type=float, default=2.0, help="repair weight on mu")
    sub.add_argument("--beta", type=float, default=2.0, help="repair weight on nu")
    sub.add_argument("--no-repair", action="store_true", help="fail instead of repairing order")
    sub.add_argument("--out", default=None, help="write the coupling CSV here")
    sub.add_argument("--report", default=None)
    sub.set_defaults(func=cmd_solve)

    sub = subs.add_parser("evaluate", help="objective value of a stored coupling")
    sub.add_argument("coupling", help="coupling file (.csv or .json)")
    _add_rap_args(sub)
    sub.add_argument("--report", default=None)
    sub.set_defaults(func=cmd_evaluate)

    sub = subs.add_parser("simulate", help="Monte-Carlo oracle for a stored coupling")
    sub.add_argument("coupling", help="coupling file (.csv or .json)")
    sub.add_argument("--t0", type=float, default=0.0)
    sub.add_argument("--t1", type=float, default=1.0)
    sub.add_argument("--paths", type=int, default=10_000)
    sub.add_argument("--grid", type=int, default=200, help="number of uniform grid cells")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", default=None, help="write long-format path CSV here")
    sub.add_argument("--max-paths-out", type=int, default=100,
                     help="cap on the number of paths written to --out")
    sub.add_argument("--report", default=None)
    sub.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleMarginalsError as exc:
        return _fail(exc, EXIT_INFEASIBLE)
    except (ProjectionError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(exc, EXIT_NUMERIC)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        return _fail(exc, EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
