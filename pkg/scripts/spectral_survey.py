"""Spectral radius of the masked Jacobi iterator over testcases and families.

    python3 scripts/spectral_survey.py --n 33

Rows with rho >= 1 are flagged: Jacobi (and anything built on it) cannot
converge there.
"""
import argparse

from ugrid.analysis import TESTCASES, gen_testcase, spectral_radius
from ugrid.stencils import FAMILIES


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=33)
    args = ap.parse_args()
    for family in FAMILIES:
        for name in TESTCASES:
            rep = spectral_radius(gen_testcase(name, args.n, family), descriptor=name)
            flag = "" if rep.contractive else "   rho >= 1"
            print(f"{family:<10}{name:<16}{rep.rho_estimate:.6f}  ({rep.iterations} its){flag}")


if __name__ == "__main__":
    main()
