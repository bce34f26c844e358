#!/usr/bin/env python3
"""Uniform-refinement convergence studies for the smooth anisotropic problem.

Writes one CSV per polynomial degree and prints the EOC table. Example:

    python3 scripts/run_convergence_studies.py --kappa 0.5 --degrees 2 3 --levels 5
"""

import argparse
import os

from nondivfem import eoc
from nondivfem.bench import RunConfig, run_convergence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kappa", type=float, default=0.5)
    ap.add_argument("--degrees", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--levels", type=int, default=5)
    ap.add_argument("--initial-n", type=int, default=4)
    ap.add_argument("--eta1", type=float, default=0.0)
    ap.add_argument("--scheme", default="recovery-cg")
    ap.add_argument("--outdir", default="results")
    args = ap.parse_args()

    os.makedirs(args.outdir, exist_ok=True)
    for p in args.degrees:
        out = os.path.join(args.outdir, "exp1_kappa%s_p%d.csv" % (args.kappa, p))
        config = RunConfig(
            experiment="exp1",
            scheme=args.scheme,
            degree=p,
            eta1=args.eta1,
            eta2=0.0,
            levels=args.levels,
            initial_n=args.initial_n,
            out=out,
            params={"kappa": args.kappa},
        )
        rows, ok = run_convergence(config)
        print("p = %d  (%s, eta1 = %g) -> %s" % (p, args.scheme, args.eta1, out))
        hs = [r[1] for r in rows]
        for name, col in (("L2", 2), ("H1", 3), ("H2h", 4)):
            errs = [r[col] for r in rows]
            rates = ["   -"] + ["%.2f" % r for r in eoc(zip(hs, errs))]
            print("  %-4s " % name + "  ".join(
                "%.3e (%s)" % (e, r) for e, r in zip(errs, rates)))
        if not ok:
            print("  WARNING: at least one solve did not converge")


if __name__ == "__main__":
    main()
