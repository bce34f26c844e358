"""Problem catalog, coefficient analysis and discrete operators.

The model problem is A : D2(u) = f on a rectangle with u = 0 on the
boundary, where A is symmetric, uniformly positive definite and satisfies
a Cordes-type bound ||A||_F^2 / tr(A)^2 <= 1/(1 + eps) for some
eps in (0, 1].  The scalar rescaling gamma = tr(A)/||A||_F^2 brings
gamma*A close to the identity, which drives both the solver and the
preconditioner.

Two discretizations are assembled here:

* the recovery scheme: a matrix-free action built from the Hessian
  recovery blocks (4 + 1 mass solves per application) plus an optional
  facet penalty, with an explicitly assembled diagonal-surrogate
  preconditioner;
* a direct scheme using the cellwise exact Hessian with a mandatory
  gradient-jump penalty, assembled as an ordinary sparse matrix.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .hessian import build_hessian_operator
from .space import (
    boundary_dofs,
    build_space,
    facet_points,
    facet_quadrature,
    physical_points,
    pullback_points,
    quadrature,
    tabulate_at,
)

__all__ = [
    "ProblemData",
    "CordesInfo",
    "CordesViolated",
    "make_problem",
    "cordes_analyze",
    "assemble_B",
    "assemble_stabilization",
    "assemble_load",
    "SystemOperator",
    "build_system",
    "apply_system",
    "assemble_rhs",
    "build_preconditioner",
    "assemble_nsz",
]


# ----------------------------------------------------------------------
# problem catalog


@dataclass
class ProblemData:
    """Coefficients, forcing and (optionally) the manufactured solution.

    All fields are vectorized callables over point arrays of shape (n, 2):
    A returns (n, 2, 2), f returns (n,), exact_* return (n,), (n, 2),
    (n, 2, 2) respectively.  exact_u is None for problems without a known
    solution.
    """

    name: str
    bounds: tuple
    A: object
    f: object
    exact_u: object = None
    exact_grad: object = None
    exact_hess: object = None
    initial_n: int = 4
    params: dict = field(default_factory=dict)

    @property
    def has_exact(self):
        return self.exact_u is not None


def _const_matrix(M):
    M = np.asarray(M, dtype=np.float64)

    def A(x):
        return np.broadcast_to(M, x.shape[:-1] + (2, 2)).copy()

    return A


def _problem_exp1(kappa=0.5):
    """Smooth solution, constant anisotropic A = [[1, k], [k, 1]] on (0,1)^2."""
    kappa = float(kappa)
    tp = 2.0 * np.pi

    def u(x):
        return np.sin(tp * x[..., 0]) * np.sin(tp * x[..., 1])

    def grad(x):
        s0, c0 = np.sin(tp * x[..., 0]), np.cos(tp * x[..., 0])
        s1, c1 = np.sin(tp * x[..., 1]), np.cos(tp * x[..., 1])
        return np.stack([tp * c0 * s1, tp * s0 * c1], axis=-1)

    def hess(x):
        s0, c0 = np.sin(tp * x[..., 0]), np.cos(tp * x[..., 0])
        s1, c1 = np.sin(tp * x[..., 1]), np.cos(tp * x[..., 1])
        H = np.empty(x.shape[:-1] + (2, 2))
        H[..., 0, 0] = -tp * tp * s0 * s1
        H[..., 0, 1] = tp * tp * c0 * c1
        H[..., 1, 0] = H[..., 0, 1]
        H[..., 1, 1] = -tp * tp * s0 * s1
        return H

    def f(x):
        s0, c0 = np.sin(tp * x[..., 0]), np.cos(tp * x[..., 0])
        s1, c1 = np.sin(tp * x[..., 1]), np.cos(tp * x[..., 1])
        return -2.0 * tp * tp * s0 * s1 + 2.0 * kappa * tp * tp * c0 * c1

    return ProblemData(
        name="exp1",
        bounds=(0.0, 1.0, 0.0, 1.0),
        A=_const_matrix([[1.0, kappa], [kappa, 1.0]]),
        f=f,
        exact_u=u,
        exact_grad=grad,
        exact_hess=hess,
        initial_n=4,
        params={"kappa": kappa},
    )


def _problem_exp2(alpha=1.5):
    """Poisson problem with the corner-singular solution
    u = r^alpha sin(2 phi) (1 - x)(1 - y) = 2 x y r^(alpha-2) (1 - x)(1 - y)
    on (0,1)^2; the Hessian blows up like r^(alpha-2) at the origin.
    """
    a = float(alpha)

    def _w_parts(x):
        X, Y = x[..., 0], x[..., 1]
        r2 = X * X + Y * Y
        r2s = np.where(r2 > 0.0, r2, 1.0)
        return X, Y, r2, r2s

    def u(x):
        X, Y, r2, r2s = _w_parts(x)
        g = (1.0 - X) * (1.0 - Y)
        val = 2.0 * X * Y * r2s ** ((a - 2.0) / 2.0) * g
        return np.where(r2 > 0.0, val, 0.0)

    def grad(x):
        X, Y, r2, r2s = _w_parts(x)
        g = (1.0 - X) * (1.0 - Y)
        w = 2.0 * X * Y * r2s ** ((a - 2.0) / 2.0)
        r4 = r2s ** ((a - 4.0) / 2.0)
        wx = 2.0 * Y * r4 * (Y * Y + (a - 1.0) * X * X)
        wy = 2.0 * X * r4 * (X * X + (a - 1.0) * Y * Y)
        ux = wx * g - w * (1.0 - Y)
        uy = wy * g - w * (1.0 - X)
        out = np.stack([ux, uy], axis=-1)
        return np.where((r2 > 0.0)[..., None], out, 0.0)

    def hess(x):
        X, Y, r2, r2s = _w_parts(x)
        g = (1.0 - X) * (1.0 - Y)
        w = 2.0 * X * Y * r2s ** ((a - 2.0) / 2.0)
        r4 = r2s ** ((a - 4.0) / 2.0)
        r6 = r2s ** ((a - 6.0) / 2.0)
        px = Y * Y + (a - 1.0) * X * X
        py = X * X + (a - 1.0) * Y * Y
        wx = 2.0 * Y * r4 * px
        wy = 2.0 * X * r4 * py
        wxx = 2.0 * X * Y * r6 * ((a - 4.0) * px + 2.0 * (a - 1.0) * r2)
        wyy = 2.0 * X * Y * r6 * ((a - 4.0) * py + 2.0 * (a - 1.0) * r2)
        wxy = 2.0 * r6 * (r2 * px + (a - 4.0) * Y * Y * px + 2.0 * Y * Y * r2)
        H = np.empty(x.shape[:-1] + (2, 2))
        H[..., 0, 0] = wxx * g - 2.0 * wx * (1.0 - Y)
        H[..., 1, 1] = wyy * g - 2.0 * wy * (1.0 - X)
        H[..., 0, 1] = wxy * g - wx * (1.0 - X) - wy * (1.0 - Y) + w
        H[..., 1, 0] = H[..., 0, 1]
        return np.where((r2 > 0.0)[..., None, None], H, 0.0)

    def f(x):
        H = hess(x)
        return H[..., 0, 0] + H[..., 1, 1]

    return ProblemData(
        name="exp2",
        bounds=(0.0, 1.0, 0.0, 1.0),
        A=_const_matrix(np.eye(2)),
        f=f,
        exact_u=u,
        exact_grad=grad,
        exact_hess=hess,
        initial_n=4,
        params={"alpha": a},
    )


def _phi(t):
    return t * (1.0 - np.exp(1.0 - np.abs(t)))


def _phi_p(t):
    return 1.0 - np.exp(1.0 - np.abs(t)) * (1.0 - np.abs(t))


def _phi_pp(t):
    return np.sign(t) * np.exp(1.0 - np.abs(t)) * (2.0 - np.abs(t))


def _problem_exp3():
    """Discontinuous A = [[2, sgn(x y)], [sgn(x y), 2]] on (-1,1)^2 with the
    exact solution u = phi(x) phi(y), phi(t) = t (1 - e^(1-|t|)).
    The mixed second derivative of u and the off-diagonal of A change sign
    together across the axes, so f = A : D2(u) stays smooth off the axes.
    """

    def A(x):
        s = np.sign(x[..., 0] * x[..., 1])
        M = np.empty(x.shape[:-1] + (2, 2))
        M[..., 0, 0] = 2.0
        M[..., 1, 1] = 2.0
        M[..., 0, 1] = s
        M[..., 1, 0] = s
        return M

    def u(x):
        return _phi(x[..., 0]) * _phi(x[..., 1])

    def grad(x):
        X, Y = x[..., 0], x[..., 1]
        return np.stack([_phi_p(X) * _phi(Y), _phi(X) * _phi_p(Y)], axis=-1)

    def hess(x):
        X, Y = x[..., 0], x[..., 1]
        H = np.empty(x.shape[:-1] + (2, 2))
        H[..., 0, 0] = _phi_pp(X) * _phi(Y)
        H[..., 1, 1] = _phi(X) * _phi_pp(Y)
        H[..., 0, 1] = _phi_p(X) * _phi_p(Y)
        H[..., 1, 0] = H[..., 0, 1]
        return H

    def f(x):
        X, Y = x[..., 0], x[..., 1]
        s = np.sign(X * Y)
        return (
            2.0 * _phi_pp(X) * _phi(Y)
            + 2.0 * s * _phi_p(X) * _phi_p(Y)
            + 2.0 * _phi(X) * _phi_pp(Y)
        )

    return ProblemData(
        name="exp3",
        bounds=(-1.0, 1.0, -1.0, 1.0),
        A=A,
        f=f,
        exact_u=u,
        exact_grad=grad,
        exact_hess=hess,
        initial_n=5,
        params={},
    )


def _problem_exp4():
    """Strongly anisotropic A with a discontinuity along y = x^3; f = -1.
    No exact solution is known; runs report the estimator only.
    """

    def A(x):
        ind = (x[..., 0] ** 3 - x[..., 1] > 0.0).astype(np.float64)
        M = np.empty(x.shape[:-1] + (2, 2))
        M[..., 0, 0] = 0.02
        M[..., 0, 1] = 0.01
        M[..., 1, 0] = 0.01
        M[..., 1, 1] = 1.0 + ind
        return M

    def f(x):
        return np.full(x.shape[:-1], -1.0)

    return ProblemData(
        name="exp4",
        bounds=(-1.0, 1.0, -1.0, 1.0),
        A=A,
        f=f,
        initial_n=8,
        params={},
    )


def _problem_poly():
    """Poisson problem whose solution x(1-x) y(1-y) lies in P4 of V_h."""

    def u(x):
        X, Y = x[..., 0], x[..., 1]
        return X * (1.0 - X) * Y * (1.0 - Y)

    def grad(x):
        X, Y = x[..., 0], x[..., 1]
        return np.stack(
            [(1.0 - 2.0 * X) * Y * (1.0 - Y), X * (1.0 - X) * (1.0 - 2.0 * Y)], axis=-1
        )

    def hess(x):
        X, Y = x[..., 0], x[..., 1]
        H = np.empty(x.shape[:-1] + (2, 2))
        H[..., 0, 0] = -2.0 * Y * (1.0 - Y)
        H[..., 1, 1] = -2.0 * X * (1.0 - X)
        H[..., 0, 1] = (1.0 - 2.0 * X) * (1.0 - 2.0 * Y)
        H[..., 1, 0] = H[..., 0, 1]
        return H

    def f(x):
        X, Y = x[..., 0], x[..., 1]
        return -2.0 * Y * (1.0 - Y) - 2.0 * X * (1.0 - X)

    return ProblemData(
        name="poly",
        bounds=(0.0, 1.0, 0.0, 1.0),
        A=_const_matrix(np.eye(2)),
        f=f,
        exact_u=u,
        exact_grad=grad,
        exact_hess=hess,
        initial_n=2,
        params={},
    )


_CATALOG = {
    "exp1": _problem_exp1,
    "exp2": _problem_exp2,
    "exp3": lambda: _problem_exp3(),
    "exp4": lambda: _problem_exp4(),
    "poly": lambda: _problem_poly(),
}


def make_problem(name, **params):
    """Instantiate a catalog problem: exp1(kappa), exp2(alpha), exp3, exp4, poly."""
    if name not in _CATALOG:
        raise KeyError("unknown problem %r; available: %s" % (name, sorted(_CATALOG)))
    return _CATALOG[name](**params)


# ----------------------------------------------------------------------
# Cordes analysis


class CordesViolated(Exception):
    """The coefficient fails ||A||_F^2/tr(A)^2 < 1 at some sampled point."""

    def __init__(self, point, ratio):
        self.point = np.asarray(point)
        self.ratio = float(ratio)
        super().__init__(
            "Cordes condition violated at %s: ||A||_F^2/tr(A)^2 = %g >= 1"
            % (self.point, self.ratio)
        )


@dataclass
class CordesInfo:
    """Largest admissible eps and the rescaling field gamma = tr(A)/||A||_F^2."""

    epsilon: float
    gamma: object
    min_eigenvalue: float = np.nan

    def gamma_at(self, x):
        return self.gamma(x)


def _gamma_field(problem):
    def gamma(x):
        A = problem.A(x)
        tr = A[..., 0, 0] + A[..., 1, 1]
        fro2 = np.einsum("...ij,...ij->...", A, A)
        return tr / fro2

    return gamma


def cordes_analyze(problem, sample_points):
    """Measure eps = min over samples of tr(A)^2/||A||_F^2 - 1, clamped to (0, 1].

    Raises CordesViolated when the ratio ||A||_F^2/tr(A)^2 reaches 1 (the
    two-dimensional ellipticity threshold) at any sampled point.
    """
    pts = np.asarray(sample_points, dtype=np.float64).reshape(-1, 2)
    A = problem.A(pts)
    if np.abs(A - np.swapaxes(A, -1, -2)).max() > 1e-12:
        raise ValueError("coefficient matrix is not symmetric")
    eigs = np.linalg.eigvalsh(A)
    lam_min = float(eigs.min())
    if lam_min <= 0.0:
        bad = int(np.unravel_index(np.argmin(eigs), eigs.shape)[0])
        raise ValueError("A not positive definite at %s" % pts[bad])
    tr = A[..., 0, 0] + A[..., 1, 1]
    fro2 = np.einsum("...ij,...ij->...", A, A)
    ratio = fro2 / tr**2
    worst = int(np.argmax(ratio))
    if ratio[worst] >= 1.0:
        raise CordesViolated(pts[worst], ratio[worst])
    eps = float(min(1.0, 1.0 / ratio[worst] - 1.0))
    return CordesInfo(epsilon=eps, gamma=_gamma_field(problem), min_eigenvalue=lam_min)


# ----------------------------------------------------------------------
# volume assembly helpers


def _volume_points(space, q):
    mesh = space.mesh
    cells = np.arange(mesh.n_cells)
    return physical_points(mesh, cells, np.broadcast_to(q.points, (mesh.n_cells,) + q.points.shape))


def assemble_B(space_W, problem, gamma, quad_degree=None):
    """Weighted mass matrices (B_ij)_{kl} = int gamma A_ij psi_l psi_k."""
    mesh = space_W.mesh
    deg = quad_degree if quad_degree is not None else 2 * space_W.degree + 2
    q = quadrature(deg)
    phi = space_W.ref.tabulate(q.points)                   # (q, nloc)
    pts = _volume_points(space_W, q)                       # (c, q, 2)
    Aq = problem.A(pts)                                    # (c, q, 2, 2)
    gq = gamma(pts)                                        # (c, q)
    dm = space_W.dof_map
    nloc = space_W.ref.n_basis
    rows = np.repeat(dm, nloc, axis=1).ravel()
    cols = np.tile(dm, (1, nloc)).ravel()
    n = space_W.n_scalar_dofs
    B = [[None, None], [None, None]]
    for i in range(2):
        for j in range(2):
            coeff = gq * Aq[..., i, j] * mesh.cell_det[:, None]
            blk = np.einsum("q,cq,qk,ql->ckl", q.weights, coeff, phi, phi)
            B[i][j] = sp.coo_matrix((blk.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return B


def assemble_load(space_W, problem, gamma, quad_degree=None):
    """Load vector (f_W)_k = int gamma f psi_k."""
    mesh = space_W.mesh
    deg = quad_degree if quad_degree is not None else 2 * space_W.degree + 2
    q = quadrature(deg)
    phi = space_W.ref.tabulate(q.points)
    pts = _volume_points(space_W, q)
    fq = problem.f(pts) * gamma(pts) * mesh.cell_det[:, None]
    blk = np.einsum("q,cq,qk->ck", q.weights, fq, phi)
    out = np.zeros(space_W.n_scalar_dofs)
    np.add.at(out, space_W.dof_map.ravel(), blk.ravel())
    return out


def assemble_stabilization(space_V, eta1, eta2):
    """Facet penalty S: eta1 * sum_F h_F^-1 int [du/dn][dv/dn]
    + eta2 * sum_F h_F int ([D2 u] n) . ([D2 v] n), interior facets only.
    """
    if eta1 < 0 or eta2 < 0:
        raise ValueError("penalty weights must be >= 0")
    mesh = space_V.mesh
    n = space_V.n_scalar_dofs
    if (eta1 == 0 and eta2 == 0) or len(mesh.interior_facets()) == 0:
        return sp.csr_matrix((n, n))
    int_f = mesh.interior_facets()
    p = space_V.degree
    t, wt = facet_quadrature(2 * p + 2)
    phys = facet_points(mesh, int_f, t)
    plus = mesh.facet_cells[int_f, 0]
    minus = mesh.facet_cells[int_f, 1]
    rp = pullback_points(mesh, plus, phys)
    rm = pullback_points(mesh, minus, phys)
    _, gp, Hp = tabulate_at(space_V, plus, rp)
    _, gm, Hm = tabulate_at(space_V, minus, rm)
    n_f = mesh.facet_normals[int_f]
    h_f = mesh.facet_lengths[int_f]
    wlen = wt[None, :] * h_f[:, None]
    nloc = space_V.ref.n_basis

    # stacked two-sided local basis: plus block then minus block
    dloc = np.concatenate([space_V.dof_map[plus], space_V.dof_map[minus]], axis=1)
    rows = np.repeat(dloc, 2 * nloc, axis=1)
    cols = np.tile(dloc, (1, 2 * nloc))

    S_parts = []
    if eta1 > 0:
        jn_p = np.einsum("ftli,fi->ftl", gp, n_f)
        jn_m = np.einsum("ftli,fi->ftl", gm, n_f)
        jump = np.concatenate([jn_p, -jn_m], axis=2)       # (F, t, 2 nloc)
        blk = eta1 * np.einsum("ft,ftk,ftl,f->fkl", wlen, jump, jump, 1.0 / h_f)
        S_parts.append(blk)
    if eta2 > 0:
        # matrix jump of the Hessian contracted with the facet normal:
        # [D2 u] = D2u+ n+ + D2u- n- = (D2u- - D2u+) n_F
        hn_p = np.einsum("ftlij,fj->ftli", Hp, n_f)
        hn_m = np.einsum("ftlij,fj->ftli", Hm, n_f)
        jump = np.concatenate([-hn_p, hn_m], axis=2)       # (F, t, 2 nloc, 2)
        blk = eta2 * np.einsum("ft,ftki,ftli,f->fkl", wlen, jump, jump, h_f)
        S_parts.append(blk)
    blk = S_parts[0] if len(S_parts) == 1 else S_parts[0] + S_parts[1]
    return sp.coo_matrix((blk.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


# ----------------------------------------------------------------------
# the discrete system


@dataclass
class SystemOperator:
    """Matrix-free action of the recovery scheme's system matrix.

    apply() computes (sum_i C_ii)^T M^-1 (sum_ij B_ij M^-1 C_ij u) + S u
    with boundary rows acting as the identity; this costs five mass solves.
    """

    hessian_op: object
    B: list
    S: sp.csr_matrix
    f_W: np.ndarray
    free_mask: np.ndarray
    eta1: float
    eta2: float
    cordes: CordesInfo
    problem: ProblemData

    @property
    def space_V(self):
        return self.hessian_op.space_V

    @property
    def n_dofs(self):
        return self.space_V.n_dofs

    def apply(self, u):
        return apply_system(self, u)


def build_system(problem, mesh, p, mode="CG", eta1=None, eta2=None, quad_degree=None):
    """Assemble everything the recovery scheme needs on a given mesh.

    Penalty defaults depend on the measured Cordes eps: well-conditioned
    coefficients (eps >= 0.5) run penalty-free, otherwise eta1 = 1.
    """
    space_V = build_space(mesh, p, "CG", "scalar")
    hop = build_hessian_operator(space_V, mode)
    deg = quad_degree if quad_degree is not None else 2 * p + 2
    q = quadrature(deg)
    sample = _volume_points(space_V, q).reshape(-1, 2)
    cordes = cordes_analyze(problem, sample)
    if eta1 is None:
        eta1 = 0.0 if cordes.epsilon >= 0.5 else 1.0
    if eta2 is None:
        eta2 = 0.0
    B = assemble_B(hop.space_W, problem, cordes.gamma, quad_degree)
    S = assemble_stabilization(space_V, eta1, eta2)
    f_W = assemble_load(hop.space_W, problem, cordes.gamma, quad_degree)
    free = np.ones(space_V.n_dofs, dtype=bool)
    free[boundary_dofs(space_V)] = False
    return SystemOperator(
        hessian_op=hop,
        B=B,
        S=S,
        f_W=f_W,
        free_mask=free,
        eta1=float(eta1),
        eta2=float(eta2),
        cordes=cordes,
        problem=problem,
    )


def apply_system(op, u):
    """One matrix-free application; boundary rows return the input unchanged."""
    hop = op.hessian_op
    u = np.asarray(u, dtype=np.float64)
    ui = np.where(op.free_mask, u, 0.0)
    g = np.zeros(hop.space_W.n_scalar_dofs)
    for i in range(2):
        for j in range(2):
            h_ij = hop.mass_solve(hop.C[i][j] @ ui)
            g += op.B[i][j] @ h_ij
    y = hop.C_trace.T @ hop.mass_solve(g) + op.S @ ui
    return np.where(op.free_mask, y, u)


def assemble_rhs(op, f_W=None):
    """Right-hand side f_V = (sum_i C_ii)^T M^-1 f_W with boundary entries zero."""
    hop = op.hessian_op
    fw = op.f_W if f_W is None else np.asarray(f_W, dtype=np.float64)
    f_V = hop.C_trace.T @ hop.mass_solve(fw)
    return np.where(op.free_mask, f_V, 0.0)


@dataclass
class Preconditioner:
    matrix: sp.csr_matrix
    lu: object

    def solve(self, r):
        return self.lu.solve(np.asarray(r, dtype=np.float64))


def build_preconditioner(op):
    """Surrogate matrix with diagonal mass inverses, assembled and factored.

    P = (sum_i C_ii)^T diag(M)^-1 (sum_ij diag(B_ij) diag(M)^-1 C_ij) + S,
    with Dirichlet rows and columns replaced by the identity.
    """
    hop = op.hessian_op
    w_inv = sp.diags(1.0 / hop.M_W.diagonal())
    inner = None
    for i in range(2):
        for j in range(2):
            term = sp.diags(op.B[i][j].diagonal()) @ w_inv @ hop.C[i][j]
            inner = term if inner is None else inner + term
    P = (hop.C_trace.T @ w_inv @ inner + op.S).tocsr()
    free = op.free_mask.astype(np.float64)
    D_free = sp.diags(free)
    D_fixed = sp.diags(1.0 - free)
    P = (D_free @ P @ D_free + D_fixed).tocsc()
    lu = splu(P)
    return Preconditioner(matrix=P.tocsr(), lu=lu)


# ----------------------------------------------------------------------
# cellwise-Hessian direct scheme


def assemble_nsz(space_V, problem, gamma, eta1, quad_degree=None):
    """Sparse matrix and rhs of the cellwise-exact-Hessian scheme.

    a(u, v) = int gamma A : D2u tr(D2v) + eta1 sum_F h_F^-1 int [du/dn][dv/dn],
    rhs(v) = int gamma f tr(D2v).  The gradient-jump penalty is mandatory
    (the form is not coercive without it).
    """
    if eta1 <= 0:
        raise ValueError("the direct scheme requires eta1 > 0")
    if space_V.degree < 2:
        warnings.warn(
            "cellwise Hessians vanish for degree 1; the direct scheme degenerates",
            stacklevel=2,
        )
    mesh = space_V.mesh
    deg = quad_degree if quad_degree is not None else 2 * space_V.degree + 2
    q = quadrature(deg)
    ref = space_V.ref
    H_ref = ref.tabulate_hess(q.points)
    Jinv = mesh.cell_inv_jacobians
    H = np.einsum("cki,qlkm,cmj->cqlij", Jinv, H_ref, Jinv)
    pts = _volume_points(space_V, q)
    Aq = problem.A(pts)
    gq = gamma(pts)
    AH = np.einsum("cqij,cqlij->cql", Aq, H)               # A : D2(phi_l)
    trH = H[..., 0, 0] + H[..., 1, 1]
    wdet = q.weights[None, :] * mesh.cell_det[:, None]
    blk = np.einsum("cq,cq,cql,cqk->ckl", wdet, gq, AH, trH)

    dm = space_V.dof_map
    nloc = ref.n_basis
    rows = np.repeat(dm, nloc, axis=1).ravel()
    cols = np.tile(dm, (1, nloc)).ravel()
    n = space_V.n_scalar_dofs
    K = sp.coo_matrix((blk.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K = K + assemble_stabilization(space_V, eta1, 0.0)

    fq = problem.f(pts) * gq * wdet
    rhs_blk = np.einsum("cq,cqk->ck", fq, trH)
    rhs = np.zeros(n)
    np.add.at(rhs, dm.ravel(), rhs_blk.ravel())

    free = np.ones(n, dtype=bool)
    free[boundary_dofs(space_V)] = False
    ff = free.astype(np.float64)
    D_free = sp.diags(ff)
    K = (D_free @ K @ D_free + sp.diags(1.0 - ff)).tocsr()
    rhs = np.where(free, rhs, 0.0)
    return K, rhs
