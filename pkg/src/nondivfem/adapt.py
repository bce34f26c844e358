"""Doerfler marking and the solve-estimate-mark-refine loop."""

from dataclasses import dataclass, field

import numpy as np

from .estimate import error_norms, local_estimator
from .mesh import bisect, build_rect_mesh
from .solve import solve_problem

__all__ = ["AdaptiveRecord", "doerfler_mark", "adaptive_loop", "initial_mesh"]


@dataclass
class AdaptiveRecord:
    level: int
    n_dofs: int
    eta_global: float
    gmres_iterations: int
    errors: object = None
    h_max: float = np.nan
    mesh: object = field(default=None, repr=False)


def doerfler_mark(eta, theta, convention="squared"):
    """Smallest prefix of cells (sorted by eta_T descending) carrying the
    fraction theta of the estimator, in the squared-sum convention by
    default (sum of marked eta_T^2 >= theta^2 * eta^2).  Ties break by
    cell id; cells with eta_T = 0 are never marked.
    """
    eta_T = np.asarray(eta.eta_T if hasattr(eta, "eta_T") else eta, dtype=np.float64)
    if eta_T.size == 0:
        raise ValueError("empty estimator field")
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must be in (0, 1]")
    if convention not in ("squared", "linear"):
        raise ValueError("convention must be 'squared' or 'linear'")
    vals = eta_T**2 if convention == "squared" else eta_T
    order = np.argsort(-vals, kind="stable")
    csum = np.cumsum(vals[order])
    total = csum[-1]
    if total == 0.0:
        return np.array([], dtype=np.int64)
    target = (theta**2 if convention == "squared" else theta) * total
    # relative slack so exact ties (csum == target up to rounding) do not
    # drag an extra cell in
    k = int(np.argmax(csum >= target - 1e-12 * total)) + 1
    return np.sort(order[:k])


def initial_mesh(problem, n=None):
    """Structured starting mesh on the problem's bounding rectangle."""
    x0, x1, y0, y1 = problem.bounds
    n = n if n is not None else problem.initial_n
    return build_rect_mesh(x0, x1, y0, y1, n, n)


def adaptive_loop(
    problem,
    p=2,
    scheme="recovery-cg",
    theta=0.9,
    max_dofs=100000,
    eta1=None,
    eta2=None,
    mesh=None,
    quad_degree=None,
    tol=(1e-8, 1e-8),
    convention="squared",
    keep_meshes=False,
):
    """Solve-estimate-mark-refine until the dof budget is exhausted.

    One record per solved level; levels are solved as long as the mesh has
    at most max_dofs degrees of freedom, so n_dofs is strictly increasing
    and bounded by the budget.
    """
    from .space import build_space

    mesh = mesh if mesh is not None else initial_mesh(problem)
    records = []
    level = 0
    while True:
        n_dofs = build_space(mesh, p, "CG", "scalar").n_dofs
        if n_dofs > max_dofs:
            break
        sol = solve_problem(
            problem, mesh, p, scheme=scheme, eta1=eta1, eta2=eta2, tol=tol,
            quad_degree=quad_degree,
        )
        est = local_estimator(sol.u_h, problem, sol.cordes.gamma, quad_degree)
        errors = None
        if problem.has_exact:
            exact = {"u": problem.exact_u, "grad": problem.exact_grad, "hess": problem.exact_hess}
            errors = error_norms(sol.u_h, exact, quad_degree)
        records.append(
            AdaptiveRecord(
                level=level,
                n_dofs=n_dofs,
                eta_global=est.eta_global,
                gmres_iterations=sol.report.iterations,
                errors=errors,
                h_max=mesh.h_max,
                mesh=mesh if keep_meshes else None,
            )
        )
        marked = doerfler_mark(est, theta, convention)
        if len(marked) == 0:
            break
        mesh = bisect(mesh, marked)
        level += 1
    return records
