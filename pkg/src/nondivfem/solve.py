"""Linear solvers and the top-level solve orchestration.

The recovery scheme's system matrix is never assembled; GMRES sees it
through a callback.  Right preconditioning keeps the monitored residual
equal to the true residual of the original system.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .hessian import recover_hessian
from .operator import (
    assemble_nsz,
    assemble_rhs,
    build_preconditioner,
    build_system,
    cordes_analyze,
)
from .operator import _volume_points
from .space import FEFunction, build_space, quadrature

__all__ = ["SolveReport", "Solution", "gmres", "solve_problem", "normalize_scheme"]


@dataclass
class SolveReport:
    iterations: int
    residual_history: list
    converged: bool
    final_true_residual: float


@dataclass
class Solution:
    u_h: FEFunction
    report: SolveReport
    cordes: object
    hessian: object = None
    system: object = field(default=None, repr=False)


def gmres(apply, b, precond=None, tol_abs=1e-8, tol_rel=1e-8, max_iter=500, x0=None):
    """Full GMRES with modified Gram-Schmidt and right preconditioning.

    Stops when the residual norm reaches max(tol_abs, tol_rel * ||b||).
    Returns (x, SolveReport); `iterations` counts Arnoldi steps.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    M = precond if precond is not None else (lambda r: r)

    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64)
    r0 = b - apply(x0) if x0.any() else b.copy()
    beta = float(np.linalg.norm(r0))
    tol = max(tol_abs, tol_rel * float(np.linalg.norm(b)))
    history = [beta]
    if beta <= tol:
        return x0.copy(), SolveReport(0, history, True, beta)

    m = max_iter
    V = np.empty((m + 1, n))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = r0 / beta

    def solution(j):
        # back substitution on the j x j triangular system, then undo the
        # right preconditioning
        y = np.linalg.solve(np.triu(H[:j, :j]), g[:j])
        return x0 + M(V[:j].T @ y)

    converged = False
    j_done = 0
    for j in range(m):
        # copy: apply or M may hand back their argument (e.g. the identity),
        # and the in-place orthogonalization below must not touch V
        w = np.array(apply(M(V[j])), dtype=np.float64)
        for i in range(j + 1):
            H[i, j] = V[i] @ w
            w -= H[i, j] * V[i]
        hnext = float(np.linalg.norm(w))
        H[j + 1, j] = hnext

        # apply stored Givens rotations, then a new one to annihilate H[j+1, j]
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        denom = np.hypot(H[j, j], H[j + 1, j])
        cs[j] = H[j, j] / denom if denom > 0 else 1.0
        sn[j] = H[j + 1, j] / denom if denom > 0 else 0.0
        H[j, j] = denom
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]

        res = abs(g[j + 1])
        history.append(res)
        j_done = j + 1
        if res <= tol:
            converged = True
            break
        if hnext == 0.0:
            # exact breakdown: the Krylov space is invariant; the current
            # least-squares solution is as good as it gets
            break
        V[j + 1] = w / hnext

    x = solution(j_done)
    true_res = float(np.linalg.norm(b - apply(x)))
    if not converged and true_res <= tol:
        converged = True
    return x, SolveReport(j_done, history, converged, true_res)


def normalize_scheme(scheme):
    s = scheme.lower().replace("_", "-")
    if s in ("recovery-cg", "cg"):
        return "recovery-cg"
    if s in ("recovery-dg", "dg"):
        return "recovery-dg"
    if s == "nsz":
        return "nsz"
    raise ValueError("unknown scheme %r (recovery-cg | recovery-dg | nsz)" % scheme)


def solve_problem(
    problem,
    mesh,
    p,
    scheme="recovery-cg",
    eta1=None,
    eta2=None,
    tol=(1e-8, 1e-8),
    max_iter=500,
    quad_degree=None,
    recover=False,
):
    """Assemble and solve one discrete problem on a fixed mesh.

    recovery-cg / recovery-dg run the matrix-free preconditioned GMRES
    solve; nsz assembles its sparse matrix and uses a direct factorization.
    Boundary coefficients of the returned function are exactly zero.
    """
    scheme = normalize_scheme(scheme)
    tol_abs, tol_rel = tol

    if scheme == "nsz":
        space_V = build_space(mesh, p, "CG", "scalar")
        q = quadrature(quad_degree if quad_degree is not None else 2 * p + 2)
        sample = _volume_points(space_V, q).reshape(-1, 2)
        cordes = cordes_analyze(problem, sample)
        e1 = 1.0 if eta1 is None else float(eta1)
        K, rhs = assemble_nsz(space_V, problem, cordes.gamma, e1, quad_degree)
        x = splu(K.tocsc()).solve(rhs)
        res = float(np.linalg.norm(rhs - K @ x))
        report = SolveReport(0, [float(np.linalg.norm(rhs)), res], True, res)
        u_h = FEFunction(space_V, x)
        return Solution(u_h=u_h, report=report, cordes=cordes)

    mode = "CG" if scheme == "recovery-cg" else "DG"
    op = build_system(problem, mesh, p, mode, eta1, eta2, quad_degree)
    b = assemble_rhs(op)
    P = build_preconditioner(op)
    x, report = gmres(
        op.apply, b, precond=P.solve, tol_abs=tol_abs, tol_rel=tol_rel, max_iter=max_iter
    )
    x[~op.free_mask] = 0.0
    u_h = FEFunction(op.space_V, x)
    hess = recover_hessian(op.hessian_op, u_h) if recover else None
    return Solution(u_h=u_h, report=report, cordes=op.cordes, hessian=hess, system=op)
