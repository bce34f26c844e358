"""Error norms against manufactured solutions and the residual estimator.

The mesh-dependent H2_h norm is the broken Hessian seminorm plus
h_F^-1-weighted normal-gradient jumps over interior facets; an exact
solution in H2 contributes nothing to the jumps, so only u_h's jumps
enter the error.  The local estimator combines the strong volume residual
of the rescaled equation with the same jump terms, attributed to both
cells next to each facet.
"""

from dataclasses import dataclass

import numpy as np

from .space import (
    evaluate,
    facet_points,
    facet_quadrature,
    physical_points,
    pullback_points,
    quadrature,
    tabulate_at,
)

__all__ = ["ErrorNorms", "EstimatorField", "error_norms", "local_estimator", "eoc", "ls_slope"]


@dataclass
class ErrorNorms:
    l2: float
    h1: float
    h2h: float
    h2_broken: float = 0.0


@dataclass
class EstimatorField:
    eta_T: np.ndarray

    @property
    def eta_global(self):
        return float(np.sqrt(np.sum(self.eta_T**2)))


def _gradient_jumps_sq(u_h, quad_deg):
    """Per-interior-facet values of h_F^-1 int_F [grad(u_h) . n_F]^2."""
    space = u_h.space
    mesh = space.mesh
    int_f = mesh.interior_facets()
    if len(int_f) == 0:
        return int_f, np.zeros(0)
    t, wt = facet_quadrature(quad_deg)
    phys = facet_points(mesh, int_f, t)
    plus = mesh.facet_cells[int_f, 0]
    minus = mesh.facet_cells[int_f, 1]
    rp = pullback_points(mesh, plus, phys)
    rm = pullback_points(mesh, minus, phys)
    _, gp, _ = tabulate_at(space, plus, rp)
    _, gm, _ = tabulate_at(space, minus, rm)
    cp = u_h.coeffs[space.dof_map[plus]]
    cm = u_h.coeffs[space.dof_map[minus]]
    gup = np.einsum("ftli,fl->fti", gp, cp)
    gum = np.einsum("ftli,fl->fti", gm, cm)
    n_f = mesh.facet_normals[int_f]
    jump = np.einsum("fti,fi->ft", gup - gum, n_f)
    h_f = mesh.facet_lengths[int_f]
    # h_F^-1 int_F [..]^2 = h_F^-1 * (sum_t w_t h_F [..]^2); the lengths cancel
    return int_f, np.einsum("t,ft->f", wt, jump**2)


def error_norms(u_h, exact, quad_degree=None):
    """L2, full H1 and broken H2_h errors of u_h against pointwise fields.

    `exact` maps the keys "u", "grad", "hess" to vectorized callables.
    """
    space = u_h.space
    mesh = space.mesh
    deg = quad_degree if quad_degree is not None else 2 * space.degree + 4
    q = quadrature(deg)
    vals, grads, hess = evaluate(u_h, q)
    pts = physical_points(mesh, np.arange(mesh.n_cells), np.broadcast_to(q.points, (mesh.n_cells,) + q.points.shape))
    du = vals - exact["u"](pts)
    dg = grads - exact["grad"](pts)
    dh = hess - exact["hess"](pts)
    wdet = q.weights[None, :] * mesh.cell_det[:, None]
    l2_sq = float(np.einsum("cq,cq->", wdet, du**2))
    h1_semi_sq = float(np.einsum("cq,cqi->", wdet, dg**2))
    h2_broken_sq = float(np.einsum("cq,cqij->", wdet, dh**2))
    _, jumps = _gradient_jumps_sq(u_h, deg)
    h2h_sq = h2_broken_sq + float(jumps.sum())
    return ErrorNorms(
        l2=np.sqrt(l2_sq),
        h1=np.sqrt(l2_sq + h1_semi_sq),
        h2h=np.sqrt(h2h_sq),
        h2_broken=np.sqrt(h2_broken_sq),
    )


def local_estimator(u_h, problem, gamma, quad_degree=None):
    """Cellwise eta_T: volume residual of the rescaled equation plus
    normal-gradient jump terms, each interior facet charged to both cells.
    """
    space = u_h.space
    mesh = space.mesh
    deg = quad_degree if quad_degree is not None else 2 * space.degree + 4
    q = quadrature(deg)
    _, _, hess = evaluate(u_h, q)
    pts = physical_points(mesh, np.arange(mesh.n_cells), np.broadcast_to(q.points, (mesh.n_cells,) + q.points.shape))
    gq = gamma(pts)
    Aq = problem.A(pts)
    fq = problem.f(pts)
    resid = gq * (fq - np.einsum("cqij,cqij->cq", Aq, hess))
    wdet = q.weights[None, :] * mesh.cell_det[:, None]
    eta_sq = np.einsum("cq,cq->c", wdet, resid**2)

    int_f, jumps = _gradient_jumps_sq(u_h, deg)
    if len(int_f):
        np.add.at(eta_sq, mesh.facet_cells[int_f, 0], jumps)
        np.add.at(eta_sq, mesh.facet_cells[int_f, 1], jumps)
    return EstimatorField(eta_T=np.sqrt(eta_sq))


def local_h2h_errors(u_h, exact, quad_degree=None):
    """Per-cell H2_h error pieces: cellwise Hessian error squared plus the
    jump terms of every adjacent interior facet (both-cells attribution,
    matching the estimator's convention).  Returns sqrt of the cell sums.
    """
    space = u_h.space
    mesh = space.mesh
    deg = quad_degree if quad_degree is not None else 2 * space.degree + 4
    q = quadrature(deg)
    _, _, hess = evaluate(u_h, q)
    pts = physical_points(mesh, np.arange(mesh.n_cells), np.broadcast_to(q.points, (mesh.n_cells,) + q.points.shape))
    dh = hess - exact["hess"](pts)
    wdet = q.weights[None, :] * mesh.cell_det[:, None]
    err_sq = np.einsum("cq,cqij->c", wdet, dh**2)
    int_f, jumps = _gradient_jumps_sq(u_h, deg)
    if len(int_f):
        np.add.at(err_sq, mesh.facet_cells[int_f, 0], jumps)
        np.add.at(err_sq, mesh.facet_cells[int_f, 1], jumps)
    return np.sqrt(err_sq)


def eoc(series):
    """Experimental orders from (h, error) pairs: log-ratio slopes."""
    series = list(series)
    if len(series) < 2:
        raise ValueError("need at least two (h, error) entries")
    hs = np.array([s[0] for s in series], dtype=np.float64)
    es = np.array([s[1] for s in series], dtype=np.float64)
    if np.any(hs <= 0) or np.any(es <= 0):
        raise ValueError("h and error values must be positive")
    return list(np.log(es[:-1] / es[1:]) / np.log(hs[:-1] / hs[1:]))


def ls_slope(x, y):
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("values must be positive")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
