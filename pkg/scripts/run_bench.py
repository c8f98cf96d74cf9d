"""Solver comparison on the benchmark geometries.

    python3 scripts/run_bench.py --checkpoint runs/smoke/checkpoint.ugck --n 65

Prints the table and writes bench.csv plus one convergence trace per row.
"""
import argparse

from ugrid.analysis import TESTCASES, bench, gen_testcase
from ugrid.net import load_checkpoint
from ugrid.solver import SolveConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--n", type=int, default=65)
    ap.add_argument("--family", default="poisson")
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--jacobi-iters", type=int, default=64,
                    help="iteration cap for the Jacobi baseline (one sweep per iteration)")
    ap.add_argument("--out-dir", default="runs/bench")
    args = ap.parse_args()

    params = load_checkpoint(args.checkpoint)
    cases = {t: gen_testcase(t, args.n, args.family) for t in TESTCASES}
    rows = bench(cases, ["classical-mg", "ugrid"], SolveConfig(), params, args.repeats,
                 args.out_dir)
    rows += bench(cases, ["jacobi"], SolveConfig(max_iters=args.jacobi_iters), None,
                  args.repeats, f"{args.out_dir}/jacobi")
    rows.sort(key=lambda r: (r.testcase, r.solver))
    print(f"{'testcase':<16}{'solver':<14}{'time_ms':>10}{'error':>12}{'iters':>8}  status")
    for r in rows:
        print(f"{r.testcase:<16}{r.solver:<14}{r.time_ms:>10.2f}{r.final_error:>12.3e}"
              f"{r.iterations:>8}  {r.terminated}")


if __name__ == "__main__":
    main()
