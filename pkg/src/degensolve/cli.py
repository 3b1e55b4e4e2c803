"""``degensolve analyze|solve|verify|fixtures`` command line.

Exit codes: 0 success; 1 invalid input, failed validation or failed checks;
2 rank-one spanning not certified; 3 incompatible right-hand side;
4 non-convergence or estimate blow-up.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from .domain_grid import from_csv, to_csv
from .errors import (
    CompatibilityViolation,
    DegensolveError,
    EstimateBlowup,
    NonConvergence,
    NotCertified,
    TensorValidationError,
)
from .problem import FIXTURE_NAMES, fixture_document, problem_from_json, read_problem_document
from .tensor_algebra import analyze_tensor, subspace_pair
from .verification import verify_solution
from .viscosity_solver import COMPATIBILITY_TOL, solve_degenerate

logger = logging.getLogger("degensolve")

EXIT_OK, EXIT_INVALID, EXIT_UNKNOWN, EXIT_INCOMPATIBLE, EXIT_NONCONVERGENCE = 0, 1, 2, 3, 4


def _dump(obj, path: Path | None = None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        path.write_text(text)
    return text


def _load(args):
    doc, base = read_problem_document(args.problem)
    overrides = {"eps0": args.eps0, "factor": args.factor, "max_steps": args.max_steps,
                 "cauchy_tol": args.cauchy_tol}
    return problem_from_json(doc, base, h=args.h, schedule_overrides=overrides)


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_analyze(args) -> int:
    problem = _load(args)
    report = analyze_tensor(problem.tensor, problem.sh, seed=args.seed)
    payload = {"problem": problem.name, "seed": args.seed,
               "config_hash": problem.config_hash(seed=args.seed), **report.to_dict()}
    out = _out_dir(args)
    sys.stdout.write(_dump(payload, out / "analysis.json" if out else None))
    if not report.validation.ok:
        return EXIT_INVALID
    return EXIT_OK if report.pi_sigma.is_certified else EXIT_UNKNOWN


def cmd_solve(args) -> int:
    problem = _load(args)
    out = _out_dir(args) or Path(".")
    grid = problem.grid()
    f = problem.rhs_on(grid)
    pair = subspace_pair(problem.tensor, seed=args.seed)
    if not pair.is_certified:
        print("rank-one spanning of the range could not be certified; refusing to solve", file=sys.stderr)
        return EXIT_UNKNOWN
    try:
        sol = solve_degenerate(problem.tensor, f, grid, problem.schedule, pair, seed=args.seed)
    except CompatibilityViolation as exc:
        print(f"compatibility violation: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (NonConvergence, EstimateBlowup) as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    (out / "solution.csv").write_text(to_csv(sol.u))
    sched = problem.schedule
    payload = {
        "problem": problem.name,
        "seed": args.seed,
        "h": problem.h,
        "num_nodes": grid.size,
        "config_hash": problem.config_hash(seed=args.seed),
        "schedule": {"eps0": sched.eps0, "factor": sched.factor, "max_steps": sched.max_steps,
                     "cauchy_tol": sched.cauchy_tol},
        "tolerances": {"cg_relative_residual": 1e-10, "compatibility": COMPATIBILITY_TOL},
        "sigma_basis": pair.sigma_basis.tolist(),
        "report": sol.report.to_dict(),
    }
    _dump(payload, out / "report.json")
    if not sol.report.converged:
        print("viscosity sweep exhausted the schedule without meeting the Cauchy tolerance",
              file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_verify(args) -> int:
    problem = _load(args)
    out = _out_dir(args) or Path(".")
    sol_path, rep_path = out / "solution.csv", out / "report.json"
    if not sol_path.exists() or not rep_path.exists():
        print(f"missing solve output in {out} (run `degensolve solve` first)", file=sys.stderr)
        return EXIT_INVALID
    grid = problem.grid()
    u = from_csv(sol_path.read_text(), grid)
    eps_final = json.loads(rep_path.read_text())["report"]["eps_final"]
    f = problem.rhs_on(grid)
    pair = subspace_pair(problem.tensor, seed=args.seed)
    if not pair.is_certified:
        return EXIT_UNKNOWN
    report = verify_solution(problem.tensor, u, f, pair, eps_final,
                             rhs_callable=problem.rhs_function(), seed=args.seed)
    payload = {"problem": problem.name, "seed": args.seed, "h": problem.h,
               "config_hash": problem.config_hash(seed=args.seed), **report.to_dict()}
    sys.stdout.write(_dump(payload, out / "verification.json"))
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_fixtures(args) -> int:
    out = _out_dir(args) or Path(".")
    for name in FIXTURE_NAMES:
        _dump(fixture_document(name), out / f"{name}.json")
        print(out / f"{name}.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="degensolve", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, needs_problem in (("analyze", cmd_analyze, True), ("solve", cmd_solve, True),
                                      ("verify", cmd_verify, True), ("fixtures", cmd_fixtures, False)):
        p = sub.add_parser(name)
        p.set_defaults(func=func)
        if needs_problem:
            p.add_argument("--problem", required=True,
                           help=f"problem JSON path or fixture name ({', '.join(FIXTURE_NAMES)})")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--h", type=float, default=None, help="override the mesh width")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--eps0", type=float, default=None)
        p.add_argument("--factor", type=float, default=None)
        p.add_argument("--max-steps", type=int, default=None)
        p.add_argument("--cauchy-tol", type=float, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("DEGENSOLVE_THREADS")
    if threads:
        limiter = threadpool_limits(limits=int(threads))
    else:
        limiter = nullcontext()
    with limiter:
        try:
            return args.func(args)
        except json.JSONDecodeError as exc:
            print(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", file=sys.stderr)
            return EXIT_INVALID
        except TensorValidationError as exc:
            print(f"invalid tensor: {exc}", file=sys.stderr)
            return EXIT_INVALID
        except NotCertified as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_UNKNOWN
        except (DegensolveError, KeyError, ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
