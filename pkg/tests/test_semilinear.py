import logging

import numpy as np
import pytest
from scipy import integrate

from semilinear_dpg.dpg_core import assemble_linear, dual_residual
from semilinear_dpg.fespace import build_trial_dofmap
from semilinear_dpg.mesh2d import build_lshape, build_unit_square, refine_uniform
from semilinear_dpg.problems import ProblemSpec, affine, example1, example2
from semilinear_dpg.semilinear import (
    MissingExactSolutionError,
    NonFiniteNonlinearityError,
    el_jacobian,
    el_residual,
    error_norms,
    global_residual,
    initial_guess,
    newton_solve,
    objective,
)


def _setup(problem, mesh):
    dm = build_trial_dofmap(mesh)
    return dm, assemble_linear(mesh, dm, problem)


def _random_state(dm, mesh, problem, rng, scale=1.0):
    x = initial_guess(mesh, dm, problem)
    x[dm.free] = scale * rng.normal(size=dm.n_free)
    return x


def fd_jacobian_error(problem, mesh, x, dm, lin, h=1e-6):
    """Relative max-norm deviation of el_jacobian from central differences."""
    J = el_jacobian(mesh, dm, lin, x, problem).toarray()
    fd = np.empty_like(J)
    for k, idx in enumerate(dm.free):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd[:, k] = (el_residual(mesh, dm, lin, xp, problem) - el_residual(mesh, dm, lin, xm, problem)) / (2 * h)
    return np.abs(J - fd).max() / np.abs(J).max()


def test_linear_problem_jacobian_is_normal_matrix():
    mesh = build_unit_square(2)
    prob = ProblemSpec(f=lambda x: 1.0 + 0 * x[..., 0], beta=(1.0, 2.0))
    dm, lin = _setup(prob, mesh)
    x = _random_state(dm, mesh, prob, np.random.default_rng(0))
    J = el_jacobian(mesh, dm, lin, x, prob).toarray()
    # rho = gamma = 0 still penalises q and r through their L2 misfits
    o_s, o_q, o_r, n = dm.offsets
    mass = np.zeros(dm.n_full)
    mass[o_q:n] = np.tile(mesh.areas, 2)
    want = (lin.A_full.toarray() + np.diag(mass))[np.ix_(dm.free, dm.free)]
    assert np.allclose(J, want, atol=1e-13)


@pytest.mark.parametrize("make,mesh", [(example1, build_unit_square(2)), (example2, build_lshape(1))])
def test_jacobian_matches_finite_differences(make, mesh):
    prob = make()
    mesh = refine_uniform(mesh, 1)
    dm, lin = _setup(prob, mesh)
    rng = np.random.default_rng(11)
    for _ in range(3):
        x = _random_state(dm, mesh, prob, rng)
        assert fd_jacobian_error(prob, mesh, x, dm, lin) <= 1e-5
        J = el_jacobian(mesh, dm, lin, x, prob)
        assert abs(J - J.T).max() == 0.0


@pytest.mark.parametrize("make", [example1, example2])
def test_residual_is_half_gradient_of_objective(make):
    prob = make()
    mesh = build_lshape(1) if make is example2 else build_unit_square(2)
    dm, lin = _setup(prob, mesh)
    rng = np.random.default_rng(3)
    x = _random_state(dm, mesh, prob, rng, 0.5)
    F = el_residual(mesh, dm, lin, x, prob)
    h = 1e-6
    for _ in range(5):
        d = np.zeros(dm.n_full)
        d[dm.free] = rng.normal(size=dm.n_free)
        fd = (objective(mesh, dm, lin, x + h * d, prob) - objective(mesh, dm, lin, x - h * d, prob)) / (2 * h)
        assert 0.5 * fd == pytest.approx(F @ d[dm.free], rel=1e-6, abs=1e-8)


def test_initial_guess():
    mesh = build_lshape(1)
    dm = build_trial_dofmap(mesh)
    x = initial_guess(mesh, dm, example2())
    u = x[: mesh.n_vertices]
    corner = np.flatnonzero(np.all(mesh.vertices == [-1.0, 1.0], axis=1))[0]
    assert u[corner] == pytest.approx(2 ** (1 / 3), rel=1e-14)
    assert np.all(x[dm.free] == 0.0)
    assert np.all(initial_guess(mesh, dm, example1()) == 0.0)


def test_linear_problem_converges_in_one_step_and_keeps_dirichlet_slots():
    mesh = build_lshape(2)
    prob = affine(0.3, 1.0, -0.7, beta=(1.0, 2.0))
    dm, lin = _setup(prob, mesh)
    x0 = initial_guess(mesh, dm, prob)
    x, rep = newton_solve(mesh, dm, lin, x0, prob)
    assert rep.converged and rep.iterations == 1
    fixed = np.flatnonzero(dm.dirichlet)
    assert np.array_equal(x[fixed], x0[fixed])
    assert np.abs(x[: mesh.n_vertices] - prob.exact_u(mesh.vertices)).max() < 1e-10
    assert dual_residual(lin, x)[0] < 1e-10


@pytest.mark.parametrize("make,mesh", [(example1, build_unit_square(4)), (example2, build_lshape(2))])
def test_newton_converges_quickly(make, mesh):
    prob = make()
    dm, lin = _setup(prob, mesh)
    x, rep = newton_solve(mesh, dm, lin, initial_guess(mesh, dm, prob), prob)
    assert rep.converged and rep.iterations <= 5
    assert rep.decrements[-1] < 1e-6 and rep.el_norms[-1] < 1e-6
    assert len(rep.residuals) == rep.iterations + 1
    assert rep.u_range[0] <= rep.u_range[1]
    # after the first step the objective does not grow (logged otherwise)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(rep.objectives[1:], rep.objectives[2:]))
    assert rep.residuals[-1] == pytest.approx(global_residual(mesh, dm, lin, x, prob)[0])


def test_line_search_option_converges():
    mesh = build_lshape(2)
    prob = example2()
    dm, lin = _setup(prob, mesh)
    _, rep = newton_solve(mesh, dm, lin, initial_guess(mesh, dm, prob), prob, line_search=True)
    assert rep.converged


def test_newton_argument_checks():
    mesh = build_unit_square(1)
    prob = example1()
    dm, lin = _setup(prob, mesh)
    with pytest.raises(ValueError):
        newton_solve(mesh, dm, lin, np.zeros(dm.n_full), prob, tol=0.0)
    with pytest.raises(ValueError):
        newton_solve(mesh, dm, lin, np.zeros(dm.n_full), prob, maxiter=0)


def test_maxiter_exhaustion_reports_failure(caplog):
    mesh = build_unit_square(2)
    prob = example1()
    dm, lin = _setup(prob, mesh)
    with caplog.at_level(logging.WARNING):
        _, rep = newton_solve(mesh, dm, lin, np.zeros(dm.n_full), prob, tol=1e-30, maxiter=2)
    assert not rep.converged and rep.iterations == 2
    assert "did not converge" in caplog.text


def test_non_finite_nonlinearity():
    mesh = build_unit_square(1)
    prob = ProblemSpec(f=lambda x: 0 * x[..., 0], rho=np.log, drho=lambda u: 1 / u, d2rho=lambda u: -1 / u**2)
    dm, lin = _setup(prob, mesh)
    x = np.zeros(dm.n_full)
    x[: mesh.n_vertices] = -1.0
    with np.errstate(all="ignore"), pytest.raises(NonFiniteNonlinearityError):
        el_residual(mesh, dm, lin, x, prob)


def test_error_norms_of_zero_state():
    prob = example1()
    mesh = refine_uniform(build_unit_square(8), 1)
    dm = build_trial_dofmap(mesh)
    err = error_norms(mesh, dm, np.zeros(dm.n_full), prob)
    assert err.grad_u == pytest.approx(np.sqrt(5) * np.pi / 2, rel=1e-3)
    assert err.u_l2 == pytest.approx(0.5, rel=1e-3)
    cos2, _ = integrate.dblquad(lambda y, x: np.cos(prob.exact_u(np.array([x, y]))) ** 2, 0, 1, 0, 1)
    atan2_, _ = integrate.dblquad(lambda y, x: np.arctan(prob.exact_u(np.array([x, y]))) ** 2, 0, 1, 0, 1)
    assert err.q == pytest.approx(np.sqrt(cos2), rel=1e-3)
    assert err.r == pytest.approx(np.sqrt(atan2_), rel=1e-3)
    assert err.combined == pytest.approx(np.sqrt(err.grad_u**2 + err.q**2 + err.r**2))


def test_error_norms_vanish_for_affine_interpolant():
    prob = affine()
    mesh = build_lshape(2)
    dm = build_trial_dofmap(mesh)
    x = np.zeros(dm.n_full)
    x[: mesh.n_vertices] = prob.exact_u(mesh.vertices)
    err = error_norms(mesh, dm, x, prob)
    assert max(err.grad_u, err.q, err.r, err.u_l2) < 1e-13


def test_missing_exact_solution():
    prob = ProblemSpec(f=lambda x: 0 * x[..., 0])
    mesh = build_unit_square(1)
    dm = build_trial_dofmap(mesh)
    with pytest.raises(MissingExactSolutionError):
        error_norms(mesh, dm, np.zeros(dm.n_full), prob)
