import numpy as np
import pytest

from nondivfem import (
    build_rect_mesh,
    build_space,
    cordes_analyze,
    eoc,
    error_norms,
    interpolate,
    local_estimator,
    ls_slope,
    make_problem,
    solve_problem,
    uniform_refine,
)
from nondivfem.estimate import local_h2h_errors
from nondivfem.space import FEFunction


def _exact_dict(problem):
    return {"u": problem.exact_u, "grad": problem.exact_grad, "hess": problem.exact_hess}


def _poly_exact():
    return {
        "u": lambda x: x[..., 0] ** 2 - x[..., 0] * x[..., 1],
        "grad": lambda x: np.stack(
            [2 * x[..., 0] - x[..., 1], -x[..., 0]], axis=-1
        ),
        "hess": lambda x: np.broadcast_to(
            np.array([[2.0, -1.0], [-1.0, 0.0]]), x.shape[:-1] + (2, 2)
        ).copy(),
    }


# ----------------------------------------------------------------------
# norms


def test_norms_vanish_for_reproduced_function():
    mesh = build_rect_mesh(0, 1, 0, 1, 3, 3)
    V = build_space(mesh, 2, "CG")
    ex = _poly_exact()
    u = interpolate(V, lambda x: ex["u"](x))
    err = error_norms(u, ex)
    assert err.l2 < 1e-12
    assert err.h1 < 1e-11
    assert err.h2h < 1e-9
    assert err.h2_broken < 1e-9


def test_norms_of_zero_function():
    # u_h = 0 against exp1: the L2 error is ||sin sin|| = 1/2
    problem = make_problem("exp1")
    mesh = build_rect_mesh(0, 1, 0, 1, 8, 8)
    V = build_space(mesh, 2, "CG")
    u = FEFunction(V, np.zeros(V.n_dofs))
    err = error_norms(u, _exact_dict(problem))
    assert np.isclose(err.l2, 0.5, atol=1e-10)
    # full H1 norm: sqrt(1/4 + 2 pi^2)
    assert np.isclose(err.h1, np.sqrt(0.25 + 2 * np.pi**2), atol=1e-8)
    # u_h = 0 has no gradient jumps, so h2h equals the broken seminorm
    assert np.isclose(err.h2h, err.h2_broken, atol=1e-12)
    assert np.isclose(err.h2_broken, 4.0 * np.pi**2, atol=1e-6)


def test_h2h_dominates_broken_seminorm():
    problem = make_problem("exp1", kappa=0.5)
    mesh = build_rect_mesh(0, 1, 0, 1, 4, 4)
    sol = solve_problem(problem, mesh, p=2)
    err = error_norms(sol.u_h, _exact_dict(problem))
    assert err.h2h >= err.h2_broken


def test_local_h2h_squares_sum_to_more_than_global():
    # both-cells attribution double counts the jumps, so the cell pieces
    # overshoot the global h2h norm but never undershoot it
    problem = make_problem("exp1", kappa=0.5)
    mesh = build_rect_mesh(0, 1, 0, 1, 4, 4)
    sol = solve_problem(problem, mesh, p=2)
    ex = _exact_dict(problem)
    local = local_h2h_errors(sol.u_h, ex)
    err = error_norms(sol.u_h, ex)
    total = np.sqrt(np.sum(local**2))
    assert total >= err.h2h - 1e-12
    assert total <= np.sqrt(2.0) * err.h2h + 1e-12


# ----------------------------------------------------------------------
# estimator


def test_estimator_residual_only_for_zero_uh():
    # u_h = 0, f = 1, A = I: eta_T^2 = int_T 1 = |T| and no jumps
    problem = make_problem("exp4")
    mesh = build_rect_mesh(-1, 1, -1, 1, 4, 4)
    V = build_space(mesh, 2, "CG")
    u = FEFunction(V, np.zeros(V.n_dofs))

    from nondivfem.operator import ProblemData, _const_matrix

    prob = ProblemData(
        name="unit",
        bounds=(-1, 1, -1, 1),
        A=_const_matrix(np.eye(2)),
        f=lambda x: np.ones(x.shape[:-1]),
    )
    info = cordes_analyze(prob, np.array([[0.0, 0.0]]))
    est = local_estimator(u, prob, info.gamma)
    areas = 0.5 * mesh.cell_det
    assert np.allclose(est.eta_T**2, areas, atol=1e-13)
    assert np.isclose(est.eta_global, np.sqrt(areas.sum()), atol=1e-12)


def test_estimator_vanishes_for_exact_polynomial_solution():
    problem = make_problem("poly")
    mesh = build_rect_mesh(0, 1, 0, 1, 3, 3)
    sol = solve_problem(problem, mesh, p=4)
    info = sol.cordes
    est = local_estimator(sol.u_h, problem, info.gamma)
    assert est.eta_global < 1e-8


def test_estimator_first_order_rate():
    problem = make_problem("exp1", kappa=0.5)
    etas, hs = [], []
    for n in (8, 16):
        mesh = build_rect_mesh(0, 1, 0, 1, n, n)
        sol = solve_problem(problem, mesh, p=2)
        est = local_estimator(sol.u_h, problem, sol.cordes.gamma)
        etas.append(est.eta_global)
        hs.append(np.sqrt(2.0) / n)
    rate = eoc(zip(hs, etas))[0]
    assert 0.7 < rate < 1.4


def test_estimator_reliability_ratio_stable():
    # eta / ||error||_{H2_h} stays within a fixed band over refinements
    problem = make_problem("exp1", kappa=0.5)
    ratios = []
    mesh = build_rect_mesh(0, 1, 0, 1, 4, 4)
    for _ in range(4):
        sol = solve_problem(problem, mesh, p=2)
        est = local_estimator(sol.u_h, problem, sol.cordes.gamma)
        err = error_norms(sol.u_h, _exact_dict(problem))
        ratios.append(est.eta_global / err.h2h)
        mesh = uniform_refine(mesh)
    ratios = np.array(ratios)
    assert ratios.min() > 0.05
    assert ratios.max() / ratios.min() < 5.0


# ----------------------------------------------------------------------
# rate helpers


def test_eoc_basic():
    out = eoc([(1.0, 1.0), (0.5, 0.25)])
    assert np.isclose(out[0], 2.0)
    out = eoc([(1.0, 8.0), (0.5, 1.0), (0.25, 0.125)])
    assert np.allclose(out, [3.0, 3.0])
    out = eoc([(1.0, 1.0), (0.5, 1.0)])
    assert np.isclose(out[0], 0.0)


def test_eoc_rejects_bad_input():
    with pytest.raises(ValueError):
        eoc([(1.0, 1.0)])
    with pytest.raises(ValueError):
        eoc([(1.0, 1.0), (0.5, -0.2)])
    with pytest.raises(ValueError):
        eoc([(0.0, 1.0), (0.5, 0.2)])


def test_ls_slope():
    h = np.array([1.0, 0.5, 0.25, 0.125])
    assert np.isclose(ls_slope(h, 3.0 * h**2), 2.0)
    with pytest.raises(ValueError):
        ls_slope(h, -h)
