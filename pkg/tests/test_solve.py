import numpy as np
import pytest

from nondivfem import (
    assemble_rhs,
    build_rect_mesh,
    build_preconditioner,
    build_system,
    error_norms,
    gmres,
    make_problem,
    solve_problem,
)
from nondivfem.solve import normalize_scheme


def _exact_dict(problem):
    return {"u": problem.exact_u, "grad": problem.exact_grad, "hess": problem.exact_hess}


# ----------------------------------------------------------------------
# GMRES on plain matrices


def test_gmres_identity_converges_immediately():
    b = np.array([1.0, -2.0, 3.0])
    x, rep = gmres(lambda v: v, b, tol_abs=1e-12, tol_rel=1e-12)
    assert rep.converged
    assert rep.iterations == 1
    assert np.allclose(x, b)


def test_gmres_diagonal_needs_at_most_n_steps():
    D = np.array([1.0, 2.0, 3.0])
    b = np.array([1.0, 1.0, 1.0])
    x, rep = gmres(lambda v: D * v, b, tol_abs=1e-12, tol_rel=1e-12)
    assert rep.converged
    assert rep.iterations <= 3
    assert np.abs(x - b / D).max() < 1e-10


def test_gmres_zero_rhs():
    x, rep = gmres(lambda v: 2.0 * v, np.zeros(4))
    assert rep.converged and rep.iterations == 0
    assert np.all(x == 0.0)


def test_gmres_history_monotone():
    rng = np.random.default_rng(0)
    A = np.eye(20) + 0.3 * rng.standard_normal((20, 20))
    b = rng.standard_normal(20)
    _, rep = gmres(lambda v: A @ v, b, tol_abs=1e-10, tol_rel=1e-10)
    assert rep.converged
    h = np.array(rep.residual_history)
    assert np.all(np.diff(h) <= 1e-13 * h[0])
    assert len(h) == rep.iterations + 1


def test_gmres_respects_max_iter():
    rng = np.random.default_rng(1)
    A = np.eye(40) + rng.standard_normal((40, 40))
    b = rng.standard_normal(40)
    _, rep = gmres(lambda v: A @ v, b, tol_abs=1e-14, tol_rel=0.0, max_iter=3)
    assert rep.iterations == 3
    assert not rep.converged


def test_gmres_perfect_preconditioner_one_step():
    rng = np.random.default_rng(2)
    A = np.diag(np.linspace(1.0, 50.0, 30))
    Ainv = np.diag(1.0 / np.diag(A))
    b = rng.standard_normal(30)
    _, rep = gmres(lambda v: A @ v, b, precond=lambda r: Ainv @ r, tol_abs=1e-10, tol_rel=1e-10)
    assert rep.converged and rep.iterations == 1


def test_gmres_right_preconditioning_reports_true_residual():
    rng = np.random.default_rng(3)
    A = np.eye(25) + 0.2 * rng.standard_normal((25, 25))
    Mfunc = lambda r: r / np.arange(1, 26)
    b = rng.standard_normal(25)
    x, rep = gmres(lambda v: A @ v, b, precond=Mfunc, tol_abs=1e-9, tol_rel=0.0)
    assert rep.converged
    true = float(np.linalg.norm(b - A @ x))
    # the monitored residual of right-preconditioned GMRES is the true one
    assert abs(true - rep.final_true_residual) < 1e-12
    assert true <= 1e-8


def test_gmres_warm_start():
    rng = np.random.default_rng(4)
    A = np.eye(15) + 0.1 * rng.standard_normal((15, 15))
    b = rng.standard_normal(15)
    x_exact = np.linalg.solve(A, b)
    _, rep_cold = gmres(lambda v: A @ v, b, tol_abs=1e-10, tol_rel=0.0)
    _, rep_warm = gmres(lambda v: A @ v, b, tol_abs=1e-10, tol_rel=0.0, x0=x_exact + 1e-8)
    assert rep_warm.iterations <= rep_cold.iterations


def test_gmres_rejects_bad_max_iter():
    with pytest.raises(ValueError):
        gmres(lambda v: v, np.ones(2), max_iter=0)


# ----------------------------------------------------------------------
# scheme names


def test_normalize_scheme():
    assert normalize_scheme("CG") == "recovery-cg"
    assert normalize_scheme("recovery_dg") == "recovery-dg"
    assert normalize_scheme("NSZ") == "nsz"
    with pytest.raises(ValueError):
        normalize_scheme("fem")


# ----------------------------------------------------------------------
# full solves


def test_solve_reproduces_polynomial():
    # quartic solution, P4 space: the discrete solution is exact
    problem = make_problem("poly")
    mesh = build_rect_mesh(0, 1, 0, 1, 2, 2)
    sol = solve_problem(problem, mesh, p=4, scheme="recovery-cg")
    assert sol.report.converged
    err = error_norms(sol.u_h, _exact_dict(problem))
    assert err.h2h < 1e-9


def test_solution_boundary_coefficients_are_zero():
    problem = make_problem("exp1", kappa=0.9)
    mesh = build_rect_mesh(0, 1, 0, 1, 4, 4)
    for scheme in ("recovery-cg", "recovery-dg", "nsz"):
        sol = solve_problem(problem, mesh, p=2, scheme=scheme)
        from nondivfem import boundary_dofs

        bd = boundary_dofs(sol.u_h.space)
        assert np.all(sol.u_h.coeffs[bd] == 0.0)


def test_solve_exp1_h2_rate():
    problem = make_problem("exp1", kappa=0.5)
    errs = []
    for n in (8, 16):
        mesh = build_rect_mesh(0, 1, 0, 1, n, n)
        sol = solve_problem(problem, mesh, p=2)
        assert sol.report.converged
        errs.append(error_norms(sol.u_h, _exact_dict(problem)).h2h)
    rate = np.log2(errs[0] / errs[1])
    assert 0.7 < rate < 1.4


def test_solve_discontinuous_coefficient():
    problem = make_problem("exp3")
    mesh = build_rect_mesh(-1, 1, -1, 1, 8, 8)
    sol = solve_problem(problem, mesh, p=2)
    assert sol.report.converged
    assert np.isclose(sol.cordes.epsilon, 0.6, atol=1e-12)
    err = error_norms(sol.u_h, _exact_dict(problem))
    assert err.l2 < 0.1


def test_cg_and_dg_recovery_agree():
    problem = make_problem("exp1", kappa=0.5)
    mesh = build_rect_mesh(0, 1, 0, 1, 8, 8)
    sol_cg = solve_problem(problem, mesh, p=2, scheme="recovery-cg")
    sol_dg = solve_problem(problem, mesh, p=2, scheme="recovery-dg")
    e_cg = error_norms(sol_cg.u_h, _exact_dict(problem))
    e_dg = error_norms(sol_dg.u_h, _exact_dict(problem))
    # different test spaces, same target: solutions agree to discretization error
    diff = np.abs(sol_cg.u_h.coeffs - sol_dg.u_h.coeffs).max()
    assert diff < 5.0 * max(e_cg.l2, e_dg.l2)


def test_solve_with_recovered_hessian():
    problem = make_problem("exp1")
    mesh = build_rect_mesh(0, 1, 0, 1, 4, 4)
    sol = solve_problem(problem, mesh, p=2, recover=True)
    assert sol.hessian is not None
    assert sol.hessian[0][1].coeffs.shape == (sol.system.hessian_op.space_W.n_scalar_dofs,)


def test_preconditioner_reduces_iterations():
    problem = make_problem("exp1", kappa=0.5)
    mesh = build_rect_mesh(0, 1, 0, 1, 16, 16)
    op = build_system(problem, mesh, p=2, eta1=1.0)
    b = assemble_rhs(op)
    P = build_preconditioner(op)
    _, rep_pre = gmres(op.apply, b, precond=P.solve, tol_abs=1e-8, tol_rel=1e-8)
    _, rep_raw = gmres(op.apply, b, tol_abs=1e-8, tol_rel=1e-8, max_iter=200)
    assert rep_pre.converged
    assert rep_pre.iterations < rep_raw.iterations


def test_nsz_solve_report_shape():
    problem = make_problem("exp1", kappa=0.5)
    mesh = build_rect_mesh(0, 1, 0, 1, 8, 8)
    sol = solve_problem(problem, mesh, p=2, scheme="nsz")
    assert sol.report.converged
    assert sol.report.iterations == 0
    assert sol.report.final_true_residual < 1e-8 * max(1.0, sol.report.residual_history[0])
