#!/usr/bin/env python3
"""Adaptive refinement studies: corner singularity, discontinuous coefficients,
and the anisotropic problem without an exact solution.

    python3 scripts/run_adaptive_studies.py --experiments exp2 exp3 --max-dofs 30000
"""

import argparse
import os

from nondivfem import ls_slope
from nondivfem.bench import RunConfig, run_convergence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--experiments", nargs="+", default=["exp2", "exp3", "exp4"],
                    choices=["exp1", "exp2", "exp3", "exp4"])
    ap.add_argument("--alpha", type=float, default=1.5)
    ap.add_argument("--degree", type=int, default=2)
    ap.add_argument("--theta", type=float, default=0.9)
    ap.add_argument("--max-dofs", type=int, default=30000)
    ap.add_argument("--outdir", default="results")
    args = ap.parse_args()

    os.makedirs(args.outdir, exist_ok=True)
    for name in args.experiments:
        params = {"alpha": args.alpha} if name == "exp2" else {}
        out = os.path.join(args.outdir, "%s_adaptive_p%d.csv" % (name, args.degree))
        config = RunConfig(
            experiment=name,
            degree=args.degree,
            refinement="adaptive",
            theta=args.theta,
            max_dofs=args.max_dofs,
            out=out,
            params=params,
        )
        rows, _ = run_convergence(config)
        print("%s: %d levels, %d -> %d dofs -> %s"
              % (name, len(rows), rows[0][0], rows[-1][0], out))
        tail = rows[-5:] if len(rows) >= 5 else rows
        n = [r[0] for r in tail]
        if rows[-1][2] is not None:
            for label, col in (("L2", 2), ("H1", 3), ("H2h", 4)):
                print("  %s slope vs dofs (last %d levels): %.3f"
                      % (label, len(tail), ls_slope(n, [r[col] for r in tail])))
        print("  estimator slope vs dofs: %.3f" % ls_slope(n, [r[5] for r in tail]))


if __name__ == "__main__":
    main()
