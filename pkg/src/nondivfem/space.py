"""Lagrange finite element spaces: quadrature, reference basis, dof maps.

The reference triangle has vertices (0,0), (1,0), (0,1).  Basis functions
are nodal (equispaced Lagrange nodes) and represented in the monomial basis
through an inverted Vandermonde matrix, which is well conditioned for the
moderate degrees used here (p <= 4 in all experiments).
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuadratureRule",
    "quadrature",
    "facet_quadrature",
    "ReferenceElement",
    "FunctionSpace",
    "FEFunction",
    "build_space",
    "boundary_dofs",
    "interpolate",
    "evaluate",
    "evaluate_function",
    "tabulate_at",
]


# ----------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Points (reference coordinates) and positive weights summing to 1/2."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _bary(points3):
    """Barycentric triples -> reference xy coordinates."""
    b = np.asarray(points3, dtype=np.float64)
    return b[:, 1:3].copy()


# symmetric rules; weights given in the "sum to one" normalization
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
_B1, _V1 = 0.470142064105115, 0.132394152788506
_B2, _V2 = 0.101286507323456, 0.125939180544827

_TABULATED = {
    1: (
        _bary([[1 / 3, 1 / 3, 1 / 3]]),
        np.array([1.0]),
    ),
    2: (
        _bary([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.array([1 / 3, 1 / 3, 1 / 3]),
    ),
    4: (
        _bary(
            [
                [1 - 2 * _A1, _A1, _A1],
                [_A1, 1 - 2 * _A1, _A1],
                [_A1, _A1, 1 - 2 * _A1],
                [1 - 2 * _A2, _A2, _A2],
                [_A2, 1 - 2 * _A2, _A2],
                [_A2, _A2, 1 - 2 * _A2],
            ]
        ),
        np.array([_W1, _W1, _W1, _W2, _W2, _W2]),
    ),
    5: (
        _bary(
            [
                [1 / 3, 1 / 3, 1 / 3],
                [1 - 2 * _B1, _B1, _B1],
                [_B1, 1 - 2 * _B1, _B1],
                [_B1, _B1, 1 - 2 * _B1],
                [1 - 2 * _B2, _B2, _B2],
                [_B2, 1 - 2 * _B2, _B2],
                [_B2, _B2, 1 - 2 * _B2],
            ]
        ),
        np.array([0.225, _V1, _V1, _V1, _V2, _V2, _V2]),
    ),
}


def _gauss01(n):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _duffy_rule(degree):
    """Collapsed tensor-product Gauss rule exact to `degree` on the triangle.

    The square (u, v) in [0,1]^2 maps onto the triangle via x = u (1 - v),
    y = v with Jacobian (1 - v), raising the polynomial degree by one.
    """
    n = int(np.ceil((degree + 2) / 2))
    u, wu = _gauss01(n)
    v, wv = _gauss01(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    X = U * (1.0 - V)
    Y = V
    W = np.outer(wu, wv) * (1.0 - V)
    return np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel()


def quadrature(degree):
    """Symmetric triangle rule exact to `degree`; collapsed Gauss above degree 5."""
    degree = int(degree)
    if degree < 1:
        raise ValueError("quadrature degree must be >= 1")
    for d in (1, 2, 4, 5):
        if degree <= d:
            pts, w = _TABULATED[d]
            return QuadratureRule(pts.copy(), 0.5 * w.copy(), degree)
    pts, w = _duffy_rule(degree)
    return QuadratureRule(pts, w, degree)


def facet_quadrature(degree):
    """Gauss-Legendre rule on [0, 1] exact to `degree` (weights sum to 1)."""
    n = max(1, int(np.ceil((degree + 1) / 2)))
    x, w = _gauss01(n)
    return x, w


# ----------------------------------------------------------------------
# reference element


def _monomial_exponents(p):
    return np.array([(a, b) for a in range(p + 1) for b in range(p + 1 - a) ], dtype=np.int64)


def _mono_eval(exps, pts):
    """Monomial values at pts (..., 2) -> (..., n_mono)."""
    x = pts[..., 0][..., None]
    y = pts[..., 1][..., None]
    return x ** exps[:, 0] * y ** exps[:, 1]


def _mono_deriv(exps, pts, dx, dy):
    """Derivative d^(dx+dy)/dx^dx dy^dy of each monomial at pts."""
    a = exps[:, 0].astype(np.float64)
    b = exps[:, 1].astype(np.float64)
    ca = np.ones_like(a)
    cb = np.ones_like(b)
    for k in range(dx):
        ca *= np.maximum(a - k, 0.0)
    for k in range(dy):
        cb *= np.maximum(b - k, 0.0)
    ea = np.maximum(exps[:, 0] - dx, 0)
    eb = np.maximum(exps[:, 1] - dy, 0)
    x = pts[..., 0][..., None]
    y = pts[..., 1][..., None]
    vals = (ca * cb) * x ** ea * y ** eb
    # kill terms whose exponent dropped below zero (coefficient is 0 already,
    # but 0 * x**0 would wrongly survive for x != 0 ... it does not; the
    # coefficient product above is exactly zero in that case)
    return vals


def _equispaced_nodes(p):
    """Nodes ordered: 3 vertices, edge 0/1/2 interiors (directed), cell interior.

    Edge k runs from local vertex (k+1)%3 to (k+2)%3; its p-1 interior nodes
    are listed in that direction.  Interior nodes are lexicographic in (i, j).
    """
    vs = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [vs[0], vs[1], vs[2]]
    for k in range(3):
        a, b = vs[(k + 1) % 3], vs[(k + 2) % 3]
        for m in range(1, p):
            nodes.append(a + (m / p) * (b - a))
    for i in range(1, p):
        for j in range(1, p - i):
            nodes.append(np.array([i / p, j / p]))
    return np.array(nodes)


class ReferenceElement:
    """Equispaced Lagrange basis of degree p on the reference triangle."""

    def __init__(self, p):
        if p < 1:
            raise ValueError("degree must be >= 1")
        self.p = int(p)
        self.nodes = _equispaced_nodes(self.p)
        self.exps = _monomial_exponents(self.p)
        self.n_basis = len(self.nodes)
        V = _mono_eval(self.exps, self.nodes)          # (n_nodes, n_mono)
        self.coeffs = np.linalg.inv(V)                 # column i: basis i
        self.n_edge = self.p - 1
        self.n_interior = (self.p - 1) * (self.p - 2) // 2

    def tabulate(self, pts):
        """Basis values at pts (..., 2) -> (..., n_basis)."""
        return _mono_eval(self.exps, pts) @ self.coeffs

    def tabulate_grad(self, pts):
        """Reference gradients, shape (..., n_basis, 2)."""
        gx = _mono_deriv(self.exps, pts, 1, 0) @ self.coeffs
        gy = _mono_deriv(self.exps, pts, 0, 1) @ self.coeffs
        return np.stack([gx, gy], axis=-1)

    def tabulate_hess(self, pts):
        """Reference second derivatives, shape (..., n_basis, 2, 2)."""
        hxx = _mono_deriv(self.exps, pts, 2, 0) @ self.coeffs
        hxy = _mono_deriv(self.exps, pts, 1, 1) @ self.coeffs
        hyy = _mono_deriv(self.exps, pts, 0, 2) @ self.coeffs
        row0 = np.stack([hxx, hxy], axis=-1)
        row1 = np.stack([hxy, hyy], axis=-1)
        return np.stack([row0, row1], axis=-2)


_REF_CACHE = {}


def reference_element(p):
    if p not in _REF_CACHE:
        _REF_CACHE[p] = ReferenceElement(p)
    return _REF_CACHE[p]


# ----------------------------------------------------------------------
# function spaces


@dataclass
class FunctionSpace:
    """Scalar or matrix-valued Lagrange space on a mesh.

    `dof_map` maps cells to the global dofs of one scalar component; a
    matrix-valued space uses four stacked copies (component-major), so
    n_dofs = 4 * n_scalar_dofs.
    """

    mesh: object
    degree: int
    continuity: str
    value_shape: str
    ref: ReferenceElement
    dof_map: np.ndarray
    n_scalar_dofs: int
    node_coords: np.ndarray = field(repr=False)

    @property
    def n_components(self):
        return 1 if self.value_shape == "scalar" else 4

    @property
    def n_dofs(self):
        return self.n_components * self.n_scalar_dofs

    def component_dof_map(self, comp):
        return self.dof_map + comp * self.n_scalar_dofs


@dataclass
class FEFunction:
    space: FunctionSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (self.space.n_dofs,):
            raise ValueError("coefficient vector length does not match space")


def build_space(mesh, p, continuity="CG", value_shape="scalar"):
    """Build a Lagrange space of degree p, continuity 'CG' or 'DG'."""
    p = int(p)
    if p < 1:
        raise ValueError("degree must be >= 1")
    if continuity not in ("CG", "DG"):
        raise ValueError("continuity must be 'CG' or 'DG'")
    if value_shape not in ("scalar", "matrix"):
        raise ValueError("value_shape must be 'scalar' or 'matrix'")
    ref = reference_element(p)
    n_loc = ref.n_basis
    n_cells = mesh.n_cells

    if continuity == "DG":
        dof_map = np.arange(n_cells * n_loc, dtype=np.int64).reshape(n_cells, n_loc)
        n_scalar = n_cells * n_loc
    else:
        dof_map = np.empty((n_cells, n_loc), dtype=np.int64)
        dof_map[:, 0:3] = mesh.cells
        offset = mesh.n_vertices
        ne = ref.n_edge
        if ne > 0:
            for k in range(3):
                fid = mesh.cell_facets[:, k]                # local edge k facet ids
                base = offset + fid[:, None] * ne
                # reference edge k runs v_{k+1} -> v_{k+2}; the global facet is
                # stored sorted, so flip the node order when the cell traverses
                # the edge from the larger to the smaller vertex id
                va = mesh.cells[:, (k + 1) % 3]
                vb = mesh.cells[:, (k + 2) % 3]
                fw = base + np.arange(ne)[None, :]
                bw = base + np.arange(ne - 1, -1, -1)[None, :]
                cols = 3 + k * ne + np.arange(ne)
                dof_map[:, cols] = np.where((va < vb)[:, None], fw, bw)
        offset += mesh.n_facets * ne
        ni = ref.n_interior
        if ni > 0:
            dof_map[:, 3 + 3 * ne :] = (
                offset + np.arange(n_cells)[:, None] * ni + np.arange(ni)[None, :]
            )
        n_scalar = offset + n_cells * ni

    # physical node coordinates (consistent across cells for CG by construction)
    v0 = mesh.vertices[mesh.cells[:, 0]]
    phys = v0[:, None, :] + np.einsum("cij,nj->cni", mesh.cell_jacobians, ref.nodes)
    node_coords = np.empty((n_scalar, 2))
    node_coords[dof_map.ravel()] = phys.reshape(-1, 2)

    return FunctionSpace(
        mesh=mesh,
        degree=p,
        continuity=continuity,
        value_shape=value_shape,
        ref=ref,
        dof_map=dof_map,
        n_scalar_dofs=n_scalar,
        node_coords=node_coords,
    )


def boundary_dofs(space):
    """Global dofs whose Lagrange nodes lie on the domain boundary (CG only)."""
    if space.continuity != "CG":
        raise ValueError("boundary dofs are only defined for CG spaces")
    mesh = space.mesh
    dofs = [mesh.boundary_vertices()]
    ne = space.ref.n_edge
    if ne > 0:
        bf = mesh.boundary_facets()
        base = mesh.n_vertices + bf[:, None] * ne + np.arange(ne)[None, :]
        dofs.append(base.ravel())
    return np.unique(np.concatenate(dofs))


def interpolate(space, f):
    """Nodal interpolant of a pointwise function f(points (n,2)) -> (n,)."""
    if space.value_shape != "scalar":
        raise ValueError("interpolate expects a scalar space")
    vals = np.asarray(f(space.node_coords), dtype=np.float64)
    return FEFunction(space, vals)


def tabulate_at(space, cells, ref_pts):
    """Physical basis values/gradients/hessians at per-cell reference points.

    Parameters
    ----------
    cells : (n,) cell ids
    ref_pts : (n, q, 2) reference coordinates, one set per cell

    Returns
    -------
    vals (n, q, n_loc), grads (n, q, n_loc, 2), hess (n, q, n_loc, 2, 2)
    in physical coordinates.
    """
    ref = space.ref
    vals = ref.tabulate(ref_pts)
    g = ref.tabulate_grad(ref_pts)
    H = ref.tabulate_hess(ref_pts)
    Jinv = space.mesh.cell_inv_jacobians[cells]        # (n, 2, 2)
    grads = np.einsum("nji,nqlj->nqli", Jinv, g)
    hess = np.einsum("nki,nqlkm,nmj->nqlij", Jinv, H, Jinv)
    return vals, grads, hess


def evaluate(fn, quad):
    """Values, gradients, hessians of a scalar FE function at quadrature points.

    Returns arrays of shape (n_cells, q), (n_cells, q, 2), (n_cells, q, 2, 2).
    """
    space = fn.space
    ref = space.ref
    mesh = space.mesh
    vals_ref = ref.tabulate(quad.points)               # (q, n_loc)
    g_ref = ref.tabulate_grad(quad.points)             # (q, n_loc, 2)
    H_ref = ref.tabulate_hess(quad.points)             # (q, n_loc, 2, 2)
    coeffs = fn.coeffs[space.dof_map]                  # (c, n_loc)
    Jinv = mesh.cell_inv_jacobians

    vals = coeffs @ vals_ref.T                         # (c, q)
    g_loc = np.einsum("cl,qlj->cqj", coeffs, g_ref)
    grads = np.einsum("cji,cqj->cqi", Jinv, g_loc)
    H_loc = np.einsum("cl,qlkm->cqkm", coeffs, H_ref)
    hess = np.einsum("cki,cqkm,cmj->cqij", Jinv, H_loc, Jinv)
    return vals, grads, hess


def evaluate_function(fn, cells, ref_pts):
    """Point evaluation of a scalar FE function at per-cell reference points."""
    vals, grads, hess = tabulate_at(fn.space, cells, ref_pts)
    coeffs = fn.coeffs[fn.space.dof_map[cells]]        # (n, n_loc)
    v = np.einsum("nql,nl->nq", vals, coeffs)
    g = np.einsum("nqli,nl->nqi", grads, coeffs)
    H = np.einsum("nqlij,nl->nqij", hess, coeffs)
    return v, g, H


def physical_points(mesh, cells, ref_pts):
    """Map per-cell reference points to physical coordinates."""
    v0 = mesh.vertices[mesh.cells[cells, 0]]
    J = mesh.cell_jacobians[cells]
    return v0[:, None, :] + np.einsum("nij,nqj->nqi", J, ref_pts)


def pullback_points(mesh, cells, phys_pts):
    """Inverse affine map: physical points (n, q, 2) to reference coordinates."""
    v0 = mesh.vertices[mesh.cells[cells, 0]]
    Jinv = mesh.cell_inv_jacobians[cells]
    return np.einsum("nij,nqj->nqi", Jinv, phys_pts - v0[:, None, :])


def facet_points(mesh, facet_ids, t):
    """Physical points on facets at 1D parameters t (same order on both sides)."""
    va = mesh.vertices[mesh.facets[facet_ids, 0]]
    vb = mesh.vertices[mesh.facets[facet_ids, 1]]
    return va[:, None, :] + t[None, :, None] * (vb - va)[:, None, :]
