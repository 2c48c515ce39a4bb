"""Command line entry point: ``glsobstacle {converge,adapt,solve,selftest}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .solver import SolverError
from .study import StudyConfig

log = logging.getLogger("glsobstacle")

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_CHECK = 3
EXIT_USAGE = 64


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value file; flags override it")
    p.add_argument("--case", choices=("smooth", "nonsmooth"))
    p.add_argument("--levels", type=int)
    p.add_argument("--gamma0", type=float, help="penalty scaling (default: 1/100 global, 1/200 local)")
    p.add_argument("--gamma-mode", dest="gamma_mode", choices=("auto", "local", "global"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--serial", action="store_true", default=None, help="deterministic output (wall_ms = 0)")
    p.add_argument("--vtk", action="store_true", default=None, help="write a VTK file per level")
    p.add_argument("-v", "--verbose", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glsobstacle", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("converge", help="uniform refinement study")
    _add_common(conv)
    conv.add_argument("--n0", type=int, help="subdivisions of the coarsest mesh")
    conv.add_argument("--no-contact", dest="no_contact", action="store_true", default=None,
                      help="move the obstacle out of reach (stabilized Poisson)")

    adapt = sub.add_parser("adapt", help="adaptive refinement study")
    _add_common(adapt)
    adapt.add_argument("--theta", type=float)
    adapt.add_argument("--max-dofs", dest="max_dofs", type=int)
    adapt.add_argument("--n0", type=int)

    solve = sub.add_parser("solve", help="solve on one uniform mesh and export fields")
    _add_common(solve)
    solve.add_argument("--n", type=int, default=8, help="subdivisions per unit length")

    st = sub.add_parser("selftest", help="run the property suites")
    st.add_argument("--full", action="store_true", help="include the convergence studies (minutes)")
    st.add_argument("--seed", type=int, default=0)
    return parser


def config_from_args(args: argparse.Namespace, mode: str) -> StudyConfig:
    from .output import read_config

    values = read_config(args.config) if getattr(args, "config", None) else {}
    names = {f.name for f in dataclasses.fields(StudyConfig)}
    for key, value in vars(args).items():
        if key in names and value is not None:
            values[key] = value
    values["mode"] = mode
    return StudyConfig(**values)


def _run_study(args, mode: str) -> int:
    from .study import run_study

    cfg = config_from_args(args, mode)
    np.random.seed(cfg.seed)
    try:
        record = run_study(cfg)
    except SolverError as exc:
        log.error("%s (partial results kept in %s)", exc, cfg.out)
        return EXIT_SOLVER
    for row in record.rows:
        print(
            f"level {row.level:2d}  ndof {row.ndof:7d}  h {row.h:.3e}  L2 {row.err_l2:.3e}  "
            f"H1 {row.err_h1:.3e}  E {row.estimator:.3e}  newton {row.newton_iters}"
        )
    for key in ("err_l2", "err_h1", "estimator"):
        s = record.slopes.get(key)
        if s is not None:
            print(f"slope {key} vs h (last 3 levels): {s:.3f}")
    print(f"outputs written to {cfg.out}")
    return EXIT_OK


def _solve(args) -> int:
    from . import output
    from .assembly import Forms, check_gamma
    from .benchmarks import error_norms, get_case
    from .estimator import element_indicators
    from .fespace import build_space
    from .solver import newton_solve, no_contact_guess

    cfg = config_from_args(args, "uniform").resolved()
    case = get_case(cfg.case)
    data = cfg.problem(case)
    space = build_space(case.build_mesh(args.n))
    check_gamma(data, space)
    forms = Forms(data, space)
    try:
        rep = newton_solve(data, space, no_contact_guess(data, space), cfg.solver_options(), forms=forms)
    except SolverError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    if not rep.converged:
        log.error("Newton did not converge in %d iterations", rep.iterations)
        return EXIT_SOLVER
    ind = element_indicators(rep.solution, data, space, forms)
    l2, h1, _ = error_norms(rep.solution, case, space)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lam = forms.multiplier(rep.solution)
    path = output.write_vtk(
        out / "solution.vtk", space, rep.solution, eta=ind.eta, multiplier=lam.mean(axis=1)
    )
    output.write_config(cfg, out / "config.txt")
    print(
        f"ndof {space.n_dofs}  newton {rep.iterations}  L2 {l2:.3e}  H1 {h1:.3e}  "
        f"E {ind.E_global:.3e}  contact points {int(np.count_nonzero(lam < 0))}"
    )
    print(f"fields written to {path}")
    return EXIT_OK


def _selftest(args) -> int:
    from .verification import full_checks, quick_checks

    results = full_checks(args.seed) if args.full else quick_checks(args.seed)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "converge":
            return _run_study(args, "uniform")
        if args.command == "adapt":
            return _run_study(args, "adaptive")
        if args.command == "solve":
            return _solve(args)
        return _selftest(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
