#!/usr/bin/env python3
"""GMRES iteration counts over anisotropy strength and mesh size.

    python3 scripts/run_iteration_table.py --h-exponents 3 4 5 6 --eta1-values 0 1
"""

import argparse

from nondivfem.bench import run_iteration_table


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kappas", type=float, nargs="+", default=[0.9, 0.99, 0.999])
    ap.add_argument("--h-exponents", type=int, nargs="+", default=[3, 4, 5, 6])
    ap.add_argument("--eta1-values", type=float, nargs="+", default=[0.0, 1.0])
    ap.add_argument("--degree", type=int, default=2)
    ap.add_argument("--out", default=None, help="CSV path (default: stdout)")
    args = ap.parse_args()

    run_iteration_table(
        kappas=tuple(args.kappas),
        h_exponents=tuple(args.h_exponents),
        eta1_values=tuple(args.eta1_values),
        degree=args.degree,
        out=args.out,
    )


if __name__ == "__main__":
    main()
