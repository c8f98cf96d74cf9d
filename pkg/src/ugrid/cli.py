"""Command-line entry point: ``ugrid {gen-data,train,solve,bench,spectral}``.

Exit codes: 0 success (``solve``: converged), 2 ``solve`` hit max iterations,
3 ``solve`` diverged, 64 usage error (bad flags, missing inputs).
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path


from . import analysis, data, training
from .grid import read_field, write_field
from .net import CheckpointError, load_checkpoint
from .solver import CONVERGED, DIVERGED, SolveConfig, write_trace_csv
from .stencils import FAMILIES

EXIT_OK, EXIT_MAX_ITERS, EXIT_DIVERGED, EXIT_USAGE = 0, 2, 3, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--threads", type=int, default=None,
                   help="BLAS thread limit (default: library default)")
    g.add_argument("--out-dir", default=".", help="output directory")
    return p


def _solve_flags(p):
    p.add_argument("--tol", type=float, default=1e-4, help="relative residual target")
    p.add_argument("--max-iters", type=int, default=64, help="outer iteration cap")
    p.add_argument("--nu1", type=int, default=2, help="pre-smoothing sweeps")
    p.add_argument("--nu2", type=int, default=2, help="post-smoothing sweeps")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="ugrid", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()

    p = sub.add_parser("gen-data", parents=[common], formatter_class=fmt,
                       help="write a donut training dataset (UGF1 files + manifest.json)")
    p.add_argument("--family", choices=FAMILIES, default="poisson")
    p.add_argument("--n", type=int, default=257, help="grid size (2**k + 1)")
    p.add_argument("--count", type=int, default=2000, help="number of samples")
    p.add_argument("--nonzero-f", action="store_true", help="sample random f instead of f = 0")

    p = sub.add_parser("train", parents=[common], formatter_class=fmt,
                       help="train a UGrid checkpoint on the residual loss")
    p.add_argument("--config", help="flat key = value config file (flags override it)")
    defaults = training.TrainConfig()
    for f in fields(training.TrainConfig):
        if f.name in ("seed", "out_dir"):
            continue
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        kind = str(f.type)
        if kind.startswith("bool"):
            p.add_argument(flag, default=None, type=lambda s: s.lower() in ("1", "true", "yes"),
                           help=f"(default: {default})")
        elif f.name == "loss":
            p.add_argument(flag, default=None, choices=("residual", "legacy"),
                           help=f"(default: {default})")
        elif f.name == "family":
            p.add_argument(flag, default=None, choices=FAMILIES, help=f"(default: {default})")
        else:
            conv = int if kind.startswith("int") else float if kind.startswith("float") else str
            p.add_argument(flag, default=None, type=conv, help=f"(default: {default})")

    p = sub.add_parser("solve", parents=[common], formatter_class=fmt,
                       help="solve one problem; exit 0/2/3 = converged/max-iters/diverged")
    p.add_argument("--solver", choices=analysis.SOLVERS, default="ugrid")
    p.add_argument("--checkpoint", help="UGrid checkpoint (required for --solver ugrid)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--testcase", default="square",
                     help=f"generator name ({', '.join(analysis.TESTCASES)}) or pgm:<path>")
    src.add_argument("--problem-dir", help="directory holding problem.json and UGF1 fields")
    p.add_argument("--n", type=int, default=257, help="grid size for --testcase")
    p.add_argument("--family", choices=FAMILIES, default="poisson")
    p.add_argument("--u0", help="UGF1 initial guess (warm start)")
    p.add_argument("--trace-out", help="write the convergence CSV here")
    p.add_argument("--solution-out", help="write the solution field (UGF1) here")
    _solve_flags(p)

    p = sub.add_parser("bench", parents=[common], formatter_class=fmt,
                       help="compare solvers on benchmark geometries")
    p.add_argument("--checkpoint", help="UGrid checkpoint (required if ugrid is benchmarked)")
    p.add_argument("--solvers", default="jacobi,classical-mg,ugrid", help="comma-separated")
    p.add_argument("--testcases", default="square,l_shape,star,donut,noisy,sharp_feature",
                   help="comma-separated generator names")
    p.add_argument("--n", type=int, default=257, help="grid size")
    p.add_argument("--family", choices=FAMILIES, default="poisson")
    p.add_argument("--repeats", type=int, default=10, help="timed repetitions per row")
    _solve_flags(p)

    p = sub.add_parser("spectral", parents=[common], formatter_class=fmt,
                       help="estimate the spectral radius of the masked Jacobi iterator")
    p.add_argument("--family", choices=FAMILIES, default="poisson")
    p.add_argument("--testcase", default="square")
    p.add_argument("--n", type=int, default=9, help="grid size (<= 129)")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=10_000)
    return parser


def _solve_config(args) -> SolveConfig:
    return SolveConfig(nu1=args.nu1, nu2=args.nu2, tol=args.tol, max_iters=args.max_iters)


def _params(path):
    if not path:
        raise UsageError("--checkpoint is required for the ugrid solver")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None


def cmd_gen_data(args) -> int:
    problems = data.gen_dataset(args.n, args.family, args.count, args.seed, args.nonzero_f)
    path = data.write_dataset(args.out_dir, problems, args.family, args.seed)
    print(f"wrote {len(problems)} {args.family} samples to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    values = training.read_config_file(args.config) if args.config else {}
    for f in fields(training.TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name not in ("seed", "out_dir"):
            values[f.name] = v
    values["seed"] = args.seed
    values["out_dir"] = args.out_dir
    cfg = training.TrainConfig.from_mapping(values)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    _, metrics = training.train(cfg)
    last = metrics[-1]
    print(f"trained {cfg.epochs} epochs: loss {last['train_loss']:.4e}, "
          f"val {last['val_rel_residual']:.3e}; checkpoint {Path(args.out_dir) / 'checkpoint.ugck'}")
    return EXIT_OK


def cmd_solve(args) -> int:
    params = _params(args.checkpoint) if args.solver == "ugrid" else None
    if args.problem_dir:
        if not (Path(args.problem_dir) / "problem.json").is_file():
            raise UsageError(f"no problem.json in {args.problem_dir}")
        problem = data.load_problem(args.problem_dir)
    else:
        problem = analysis.gen_testcase(args.testcase, args.n, args.family, args.seed)
    u0 = read_field(args.u0) if args.u0 else None
    cfg = _solve_config(args)
    from .solver import jacobi_solve, mg_solve, solve
    if args.solver == "ugrid":
        u, report = solve(problem, params, cfg, u0)
    elif args.solver == "jacobi":
        u, report = jacobi_solve(problem, cfg, u0)
    else:
        u, report = mg_solve(problem, cfg, u0)
    if args.trace_out:
        write_trace_csv(args.trace_out, report)
    if args.solution_out:
        write_field(args.solution_out, u)
    kind = "absolute" if report.absolute else "relative"
    print(f"{report.solver}: {report.terminated} after {report.iterations} iterations, "
          f"{kind} residual {report.final_error:.3e}, {1e3 * report.wall_time:.1f} ms")
    if report.terminated == CONVERGED:
        return EXIT_OK
    return EXIT_DIVERGED if report.terminated == DIVERGED else EXIT_MAX_ITERS


def cmd_bench(args) -> int:
    solvers = [s.strip() for s in args.solvers.split(",") if s.strip()]
    bad = [s for s in solvers if s not in analysis.SOLVERS]
    if bad:
        raise UsageError(f"unknown solvers {bad}; expected {analysis.SOLVERS}")
    params = _params(args.checkpoint) if "ugrid" in solvers else None
    names = [t.strip() for t in args.testcases.split(",") if t.strip()]
    cases = {t: analysis.gen_testcase(t, args.n, args.family, args.seed) for t in names}
    rows = analysis.bench(cases, solvers, _solve_config(args), params, args.repeats, args.out_dir)
    print(f"{'testcase':<16}{'solver':<14}{'time_ms':>10}{'error':>12}{'iters':>7}  status")
    for r in rows:
        print(f"{r.testcase:<16}{r.solver:<14}{r.time_ms:>10.2f}{r.final_error:>12.3e}"
              f"{r.iterations:>7}  {r.terminated}")
    return EXIT_OK


def cmd_spectral(args) -> int:
    problem = analysis.gen_testcase(args.testcase, args.n, args.family, args.seed)
    rep = analysis.spectral_radius(problem, args.tol, args.max_iter, args.seed,
                                   descriptor=args.testcase)
    flag = "" if rep.contractive else "  [rho >= 1: Jacobi premise fails]"
    state = "converged" if rep.converged else "NOT converged"
    print(f"rho = {rep.rho_estimate:.6f} ({args.family}, {args.testcase}, n={args.n}; "
          f"power iteration {state} after {rep.iterations} steps){flag}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "solve": cmd_solve,
            "bench": cmd_bench, "spectral": cmd_spectral}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "train" and args.command != "gen-data":
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(args.threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, FileNotFoundError) as exc:
        print(f"ugrid {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
