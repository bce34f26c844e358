"""Experiment harness and command line interface.

Produces CSV files with the fixed column layout

    Ndofs,h_max,L2_error,H1_error,H2h_error,Eta_global,iterations

(one row per refinement level; unavailable quantities stay empty).  All
floats are written with repr, so identical configurations give
byte-identical files and every value round-trips exactly.
"""

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .adapt import adaptive_loop, initial_mesh
from .estimate import error_norms, local_estimator
from .mesh import build_rect_mesh
from .operator import CordesViolated, make_problem
from .solve import normalize_scheme, solve_problem
from .space import build_space

__all__ = [
    "RunConfig",
    "run_convergence",
    "run_iteration_table",
    "run_scheme_comparison",
    "write_csv",
    "read_csv",
    "main",
]

CSV_HEADER = ["Ndofs", "h_max", "L2_error", "H1_error", "H2h_error", "Eta_global", "iterations"]

_EXPERIMENTS = ("exp1", "exp2", "exp3", "exp4")


@dataclass
class RunConfig:
    experiment: str
    scheme: str = "recovery-cg"
    degree: int = 2
    eta1: float = None
    eta2: float = None
    refinement: str = "uniform"
    theta: float = 0.9
    levels: int = 5
    max_dofs: int = 100000
    tol_abs: float = 1e-8
    tol_rel: float = 1e-8
    quad_degree: int = None
    initial_n: int = None
    convention: str = "squared"
    out: str = None
    params: dict = field(default_factory=dict)

    def validate(self):
        if self.experiment not in _EXPERIMENTS:
            raise ValueError(
                "unknown experiment %r; choose from %s" % (self.experiment, list(_EXPERIMENTS))
            )
        normalize_scheme(self.scheme)
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.refinement not in ("uniform", "adaptive"):
            raise ValueError("refinement must be 'uniform' or 'adaptive'")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must be in (0, 1]")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.max_dofs < 1:
            raise ValueError("max_dofs must be >= 1")
        for e in (self.eta1, self.eta2):
            if e is not None and e < 0:
                raise ValueError("penalty weights must be >= 0")
        return self

    def make_problem(self):
        return make_problem(self.experiment, **self.params)


# ----------------------------------------------------------------------
# CSV plumbing


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def read_csv(path):
    """Parse a harness CSV back into (header, rows); empty fields become None."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        row = []
        for tok in ln.split(","):
            row.append(None if tok == "" else float(tok))
        rows.append(row)
    return header, rows


# ----------------------------------------------------------------------
# studies


def _solve_row(problem, mesh, config):
    sol = solve_problem(
        problem,
        mesh,
        config.degree,
        scheme=config.scheme,
        eta1=config.eta1,
        eta2=config.eta2,
        tol=(config.tol_abs, config.tol_rel),
        quad_degree=config.quad_degree,
    )
    est = local_estimator(sol.u_h, problem, sol.cordes.gamma, config.quad_degree)
    l2 = h1 = h2h = None
    if problem.has_exact:
        exact = {"u": problem.exact_u, "grad": problem.exact_grad, "hess": problem.exact_hess}
        err = error_norms(sol.u_h, exact, config.quad_degree)
        l2, h1, h2h = err.l2, err.h1, err.h2h
    n_dofs = sol.u_h.space.n_dofs
    row = [n_dofs, mesh.h_max, l2, h1, h2h, est.eta_global, sol.report.iterations]
    return row, sol


def run_convergence(config):
    """Uniform or adaptive refinement study; returns (rows, all_converged)."""
    config.validate()
    problem = config.make_problem()
    rows = []
    ok = True
    if config.refinement == "adaptive":
        records = adaptive_loop(
            problem,
            p=config.degree,
            scheme=config.scheme,
            theta=config.theta,
            max_dofs=config.max_dofs,
            eta1=config.eta1,
            eta2=config.eta2,
            mesh=initial_mesh(problem, config.initial_n),
            quad_degree=config.quad_degree,
            tol=(config.tol_abs, config.tol_rel),
            convention=config.convention,
        )
        for r in records:
            e = r.errors
            rows.append(
                [
                    r.n_dofs,
                    r.h_max,
                    e.l2 if e else None,
                    e.h1 if e else None,
                    e.h2h if e else None,
                    r.eta_global,
                    r.gmres_iterations,
                ]
            )
    else:
        n0 = config.initial_n if config.initial_n is not None else problem.initial_n
        x0, x1, y0, y1 = problem.bounds
        for level in range(config.levels):
            n = n0 * 2**level
            mesh = build_rect_mesh(x0, x1, y0, y1, n, n)
            row, sol = _solve_row(problem, mesh, config)
            ok = ok and sol.report.converged
            rows.append(row)
    if config.out is not None or rows:
        write_csv(config.out, CSV_HEADER, rows)
    return rows, ok


def run_iteration_table(
    kappas=(0.9, 0.99, 0.999),
    h_exponents=(3, 4, 5, 6),
    eta1_values=(0.0, 1.0),
    degree=2,
    tol=(1e-8, 1e-8),
    out=None,
):
    """GMRES iteration grid for the anisotropic smooth problem.

    Rows are mesh sizes h = 2^-k; columns are (kappa, eta1) pairs; failed
    solves are recorded as -1.
    """
    header = ["h"]
    for k in kappas:
        for e1 in eta1_values:
            header.append("kappa%s_eta1_%s" % (k, int(e1) if e1 == int(e1) else e1))
    rows = []
    for ex in h_exponents:
        n = 2**ex
        row = [0.5**ex]
        for k in kappas:
            problem = make_problem("exp1", kappa=k)
            x0, x1, y0, y1 = problem.bounds
            mesh = build_rect_mesh(x0, x1, y0, y1, n, n)
            for e1 in eta1_values:
                try:
                    sol = solve_problem(
                        problem, mesh, degree, scheme="recovery-cg",
                        eta1=e1, eta2=0.0, tol=tol,
                    )
                    row.append(sol.report.iterations if sol.report.converged else -1)
                except (CordesViolated, RuntimeError):
                    row.append(-1)
        rows.append(row)
    write_csv(out, header, rows)
    return header, rows


def run_scheme_comparison(config, degrees=(1, 2, 3, 4)):
    """Error columns of all three schemes side by side on shared meshes."""
    config.validate()
    problem = config.make_problem()
    schemes = ["recovery-cg", "recovery-dg", "nsz"]
    header = ["degree", "Ndofs", "h_max"]
    for s in schemes:
        tag = s.replace("-", "_")
        header += ["%s_L2" % tag, "%s_H1" % tag, "%s_H2h" % tag]
    exact = None
    if problem.has_exact:
        exact = {"u": problem.exact_u, "grad": problem.exact_grad, "hess": problem.exact_hess}
    n0 = config.initial_n if config.initial_n is not None else problem.initial_n
    x0, x1, y0, y1 = problem.bounds
    rows = []
    for p in degrees:
        for level in range(config.levels):
            n = n0 * 2**level
            mesh = build_rect_mesh(x0, x1, y0, y1, n, n)
            n_dofs = build_space(mesh, p, "CG", "scalar").n_dofs
            row = [p, n_dofs, mesh.h_max]
            for s in schemes:
                try:
                    sol = solve_problem(
                        problem, mesh, p, scheme=s, eta1=config.eta1, eta2=config.eta2,
                        tol=(config.tol_abs, config.tol_rel),
                        quad_degree=config.quad_degree,
                    )
                    if exact is not None:
                        err = error_norms(sol.u_h, exact, config.quad_degree)
                        row += [err.l2, err.h1, err.h2h]
                    else:
                        row += [None, None, None]
                except (CordesViolated, RuntimeError, ValueError):
                    row += [None, None, None]
            rows.append(row)
    write_csv(config.out, header, rows)
    return header, rows


# ----------------------------------------------------------------------
# CLI


def _cap_threads():
    cap = os.environ.get("NONDIVFEM_THREADS")
    if cap:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, cap)


def _add_common(sub):
    sub.add_argument("--experiment", required=True, choices=_EXPERIMENTS)
    sub.add_argument("--kappa", type=float, default=0.5, help="exp1 anisotropy")
    sub.add_argument("--alpha", type=float, default=1.5, help="exp2 corner exponent")
    sub.add_argument("--scheme", default="recovery-cg",
                     choices=["recovery-cg", "recovery-dg", "nsz"])
    sub.add_argument("--degree", type=int, default=2)
    sub.add_argument("--eta1", type=float, default=None,
                     help="gradient-jump penalty (default: 0 if eps >= 0.5 else 1)")
    sub.add_argument("--eta2", type=float, default=None, help="Hessian-jump penalty (default 0)")
    sub.add_argument("--quad-degree", type=int, default=None)
    sub.add_argument("--tol", type=float, default=1e-8, help="absolute and relative tolerance")
    sub.add_argument("--initial-n", type=int, default=None)
    sub.add_argument("--out", default=None, help="CSV path (default: stdout)")


def _problem_params(args):
    if args.experiment == "exp1":
        return {"kappa": args.kappa}
    if args.experiment == "exp2":
        return {"alpha": args.alpha}
    return {}


def _config_from(args, refinement):
    return RunConfig(
        experiment=args.experiment,
        scheme=args.scheme,
        degree=args.degree,
        eta1=args.eta1,
        eta2=args.eta2,
        refinement=refinement,
        theta=getattr(args, "theta", 0.9),
        levels=getattr(args, "levels", 5),
        max_dofs=getattr(args, "max_dofs", 100000),
        tol_abs=args.tol,
        tol_rel=args.tol,
        quad_degree=args.quad_degree,
        initial_n=args.initial_n,
        convention=getattr(args, "mark_convention", "squared"),
        out=args.out,
        params=_problem_params(args),
    )


def build_parser():
    ap = argparse.ArgumentParser(
        prog="nondivfem",
        description="Finite element studies for elliptic equations in non-divergence form",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="uniform or adaptive convergence study")
    _add_common(run)
    run.add_argument("--refine", default="uniform", choices=["uniform", "adaptive"])
    run.add_argument("--levels", type=int, default=5)
    run.add_argument("--theta", type=float, default=0.9)
    run.add_argument("--max-dofs", type=int, default=100000)
    run.add_argument("--mark-convention", default="squared", choices=["squared", "linear"])

    ad = sub.add_parser("adapt", help="adaptive refinement study")
    _add_common(ad)
    ad.add_argument("--theta", type=float, default=0.9)
    ad.add_argument("--max-dofs", type=int, default=100000)
    ad.add_argument("--mark-convention", default="squared", choices=["squared", "linear"])

    it = sub.add_parser("iters", help="GMRES iteration table")
    it.add_argument("--kappas", default="0.9,0.99,0.999")
    it.add_argument("--h-exponents", default="3,4,5,6")
    it.add_argument("--eta1-values", default="0,1")
    it.add_argument("--degree", type=int, default=2)
    it.add_argument("--tol", type=float, default=1e-8)
    it.add_argument("--out", default=None)

    cmp_ = sub.add_parser("compare", help="scheme comparison on shared meshes")
    _add_common(cmp_)
    cmp_.add_argument("--degrees", default="1,2,3,4")
    cmp_.add_argument("--levels", type=int, default=4)

    return ap


def main(argv=None):
    _cap_threads()
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "run":
            config = _config_from(args, args.refine)
            _, ok = run_convergence(config)
            return 0 if ok else 3
        if args.command == "adapt":
            config = _config_from(args, "adaptive")
            _, ok = run_convergence(config)
            return 0 if ok else 3
        if args.command == "iters":
            kappas = [float(t) for t in args.kappas.split(",")]
            exps = [int(t) for t in args.h_exponents.split(",")]
            etas = [float(t) for t in args.eta1_values.split(",")]
            _, rows = run_iteration_table(
                kappas, exps, etas, degree=args.degree,
                tol=(args.tol, args.tol), out=args.out,
            )
            failed = any(v == -1 for row in rows for v in row[1:])
            return 3 if failed else 0
        if args.command == "compare":
            config = _config_from(args, "uniform")
            degrees = [int(t) for t in args.degrees.split(",")]
            run_scheme_comparison(config, degrees)
            return 0
    except (ValueError, KeyError) as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return 2
    except CordesViolated as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
