"""Command-line interface: ``ultraweak {solve,convergence,greedy,online,validate}``.

Exit codes: 0 success, 2 configuration/problem error, 3 numerical failure.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from .analysis import convergence_study, expand_levels, l2_error, l2_norm, linf_error
from .exceptions import ConfigError, NumericalError
from .problem import load_problem, validate
from .rb import (
    FullOrderModel,
    equidistant,
    hierarchical_estimate,
    load_model,
    online_solve,
    random_parameters,
    reduced_error,
    save_model,
    strong_greedy,
)
from .solver import discretize, post_process, solve_full

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _dump(data):
    return json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n"


def _write(out_dir, name, text):
    if out_dir is None:
        return None
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _finite(x):
    return None if x is None or not math.isfinite(x) else x


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args):
    problem = load_problem(args.problem)
    if problem.is_parametric:
        problem = problem.at(args.mu if args.mu is not None else problem.affine.midpoint())
    op, rhs = discretize(problem, args.n, args.order, args.extend, args.mode)
    sol = solve_full(op, rhs, args.solver)
    result = post_process(sol) if args.postprocess else sol
    summary = {
        "problem": problem.name,
        "dim": problem.dim,
        "n_cells": list(op.grid.core_n_cells),
        "extend": args.extend,
        "order": args.order,
        "mode": op.mode,
        "postprocess": bool(args.postprocess),
        "n_y": op.n_y,
        "n_x": op.n_x,
        "solver": sol.diagnostics,
        "l2_norm": l2_norm(result, args.quad_subdiv),
    }
    if problem.exact is not None:
        summary["l2_error"] = l2_error(result, problem.exact, args.quad_subdiv)
        summary["linf_error"] = linf_error(result, problem.exact)
    text = _dump(summary)
    sys.stdout.write(text)
    _write(args.out, "summary.json", text)
    if args.out is not None and args.samples:
        axes = [np.linspace(a, b, args.samples) for a, b in op.grid.core_bounds()]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = result.evaluate(pts)
        names = ["t", "x", "y", "z"][: problem.dim] if problem.is_spacetime else ["x", "y", "z", "w"][: problem.dim]
        lines = [",".join(names + ["u"])]
        lines += [",".join(f"{v:.6g}" for v in row) for row in np.column_stack([pts, vals])]
        _write(args.out, "field.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_convergence(args):
    problem = load_problem(args.problem)
    if problem.is_parametric:
        problem = problem.at(args.mu if args.mu is not None else problem.affine.midpoint())
    report = convergence_study(
        problem,
        expand_levels(args.levels),
        order=args.order,
        extend=args.extend,
        mode=args.mode,
        postprocess=args.postprocess,
        subdivisions=args.quad_subdiv,
        with_linf=args.linf,
        solver=args.solver,
    )
    text = report.to_csv()
    sys.stdout.write(text)
    _write(args.out, "convergence.csv", text)
    return EXIT_OK


def cmd_greedy(args):
    problem = load_problem(args.problem)
    if not problem.is_parametric:
        raise ConfigError(f"problem {problem.name!r} is not parametric")
    full = FullOrderModel(problem, args.n, args.order)
    box = problem.affine.parameter_box
    train = equidistant(box, args.train)
    model, trace, _ = strong_greedy(full, train, args.tol, args.max_basis)
    if args.problem.endswith(".json"):
        model.meta["problem_source"] = args.problem
    trace_csv = trace.to_csv()
    sys.stdout.write(trace_csv)
    if args.out is not None:
        _write(args.out, "trace.csv", trace_csv)
        save_model(model, os.path.join(args.out, "model.uwrb"))
    if args.test:
        test = random_parameters(box, args.test, args.seed)
        sols = [full.solve(mu) for mu in test]
        lines = ["N,max_test_error"]
        for n in range(model.N + 1):
            sub = model.prefix(n)
            err = max(reduced_error(sub, s.mu, s.norm2) for s in sols)
            lines.append(f"{n},{err:.6g}")
        _write(args.out, "test.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_online(args):
    model = load_model(args.model, attach_full=args.compare_full)
    mu = np.atleast_1d(np.asarray(args.mu, dtype=float))
    out = {"mu": mu.tolist(), "N": model.N}
    if model.N:
        coeffs, u = online_solve(model, mu, reconstruct=args.compare_full)
        if args.coeffs:
            out["coeffs"] = coeffs.tolist()
    if args.compare_full:
        sol = model.full.solve(mu)
        out["l2_vs_full"] = reduced_error(model, mu, sol.norm2) if model.N == 0 else model.full.l2_norm(u - sol.u)
        out["l2_full"] = math.sqrt(sol.norm2)
    if args.fine_model:
        fine = load_model(args.fine_model, attach_full=False)
        out["M"] = fine.N
        out["estimate"] = hierarchical_estimate(model, fine, mu)
    sys.stdout.write(_dump(out))
    _write(args.out, "online.json", _dump(out))
    return EXIT_OK


def cmd_validate(args):
    problem = load_problem(args.problem)
    report = validate(problem, problem.grid(args.n), raise_on_fail=False)
    text = _dump({"problem": problem.name, **report.as_dict()})
    sys.stdout.write(text)
    _write(args.out, "validation.json", text)
    return EXIT_OK if report.passed else EXIT_CONFIG


# ---------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--problem", default="1d-decay", help="catalog name or path to a .json problem")
    p.add_argument("--n", type=int, default=8, help="cells per dimension")
    p.add_argument("--order", type=int, default=1, help="test space polynomial order")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for random test parameters")


def _discretisation(p):
    p.add_argument("--extend", type=int, default=0, help="cell layers beyond outflow sides")
    p.add_argument("--mode", default="auto", choices=["auto", "constant", "pwconstant", "general"])
    p.add_argument("--postprocess", action="store_true", help="limit derivative terms (p >= 2)")
    p.add_argument("--quad-subdiv", type=int, default=4, help="error quadrature subdivisions per cell")
    p.add_argument("--solver", default="auto", choices=["auto", "direct", "cg"])
    p.add_argument("--mu", type=float, nargs="+", default=None, help="parameter for parametric problems")


def build_parser():
    parser = argparse.ArgumentParser(prog="ultraweak", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one problem and report errors")
    _common(p)
    _discretisation(p)
    p.add_argument("--samples", type=int, default=0, help="write field.csv on this many points per dimension")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("convergence", help="errors and rates over doubling levels")
    _common(p)
    _discretisation(p)
    p.add_argument("--levels", default="4:64", help="a:b doubling range or comma list")
    p.add_argument("--linf", action="store_true", help="add an L-infinity column")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("greedy", help="build a reduced model by strong greedy selection")
    _common(p)
    p.add_argument("--train", type=int, default=100, help="number of equidistant training parameters")
    p.add_argument("--tol", type=float, default=1e-4, help="greedy tolerance")
    p.add_argument("--test", type=int, default=0, help="random test parameters for test.csv")
    p.add_argument("--max-basis", type=int, default=None)
    p.set_defaults(func=cmd_greedy, problem="tc1")

    p = sub.add_parser("online", help="evaluate a saved reduced model")
    p.add_argument("--model", required=True)
    p.add_argument("--mu", type=float, nargs="+", required=True)
    p.add_argument("--fine-model", default=None, help="nested larger model for the error estimate")
    p.add_argument("--compare-full", action="store_true", help="also solve the full problem")
    p.add_argument("--coeffs", action="store_true", help="include reduced coefficients")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("validate", help="check problem data")
    p.add_argument("--problem", default="1d-decay")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
