"""Euler-Lagrange system of the discrete minimum-residual problem and Newton.

The discrete objective on a full coefficient vector ``x = (u, sigma, q, r)``
is::

    Phi(x) = |B x - L|^2_{V_h^*} + |rho(u) - q|^2 + |gamma(u) - r|^2

``el_residual`` returns ``grad Phi / 2`` on the free DOFs and
``el_jacobian`` the matching Hessian ``/ 2``.  The nonlinear L2 terms are
integrated with the 3-point rule; reported residuals and errors with the
7-point rule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dpg_core import LinearNormalSystem, dual_residual
from .fespace import TrialDofMap, element_geometry, physical_points, triangle_quadrature
from .linsolve import SingularMatrixError, factor_solve
from .mesh2d import Mesh
from .problems import ProblemSpec

log = logging.getLogger(__name__)


class NonFiniteNonlinearityError(FloatingPointError):
    def __init__(self, element, state):
        super().__init__(f"non-finite nonlinearity on element {element} at u = {state!r}")
        self.element = element
        self.state = state


class MissingExactSolutionError(ValueError):
    """Error norms requested for a problem without exact solution."""


class NewtonSolveError(RuntimeError):
    def __init__(self, iteration, cause):
        super().__init__(f"Newton iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclass
class NewtonReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)  # Res per iterate, 7-point rule
    decrements: list = field(default_factory=list)  # Newton decrement per iterate
    el_norms: list = field(default_factory=list)  # Euclidean norm of the EL residual
    objectives: list = field(default_factory=list)
    converged: bool = False
    u_range: tuple = (np.nan, np.nan)


def _check_finite(values, uq):
    bad = ~np.isfinite(values)
    if bad.any():
        t, k = np.argwhere(bad)[0]
        raise NonFiniteNonlinearityError(int(t), float(uq[t, k]))


def _local_states(mesh: Mesh, dofmap: TrialDofMap, x, rule):
    u, _, q, r = dofmap.split(x)
    phi = rule.points  # hats equal barycentric coordinates
    uq = u[mesh.triangles] @ phi.T  # (nt, nq)
    _, _, area, _ = element_geometry(mesh)
    w = rule.weights[None, :] * (2.0 * area)[:, None]
    return uq, q, r, w, phi


def constraint_residuals(mesh, dofmap, x, problem, rule="residual-7pt"):
    """Per-element ``|rho(u_h) - q_h|_T^2`` and ``|gamma(u_h) - r_h|_T^2``."""
    uq, q, r, w, _ = _local_states(mesh, dofmap, x, triangle_quadrature(rule))
    R = problem.rho(uq) - q[:, None]
    S = problem.gamma(uq) - r[:, None]
    _check_finite(R, uq)
    _check_finite(S, uq)
    return np.sum(w * R * R, axis=1), np.sum(w * S * S, axis=1)


def objective(mesh, dofmap, linear, x, problem, rule="nonlinear-3pt") -> float:
    """Discrete minimum-residual functional ``Phi(x)``."""
    d, _ = dual_residual(linear, x)
    a, b = constraint_residuals(mesh, dofmap, x, problem, rule)
    return d * d + float(a.sum() + b.sum())


def global_residual(mesh, dofmap, linear, x, problem):
    """``(Res, dual, |rho(u)-q|, |gamma(u)-r|, per-element Res(T))`` with the 7-point rule."""
    d, d_el = dual_residual(linear, x)
    a, b = constraint_residuals(mesh, dofmap, x, problem)
    per = np.sqrt(d_el**2 + a + b)
    total = float(np.sqrt(np.sum(per**2)))
    return total, d, float(np.sqrt(a.sum())), float(np.sqrt(b.sum())), per


def _nonlinear_full(mesh, dofmap, x, problem, with_jacobian):
    rule = triangle_quadrature("nonlinear-3pt")
    uq, q, r, w, phi = _local_states(mesh, dofmap, x, rule)
    R = problem.rho(uq) - q[:, None]
    S = problem.gamma(uq) - r[:, None]
    dR = problem.drho(uq)
    dS = problem.dgamma(uq)
    for arr in (R, S, dR, dS):
        _check_finite(arr, uq)

    o_s, o_q, o_r, n = dofmap.offsets
    nt = mesh.n_triangles
    tid = np.arange(nt)
    F = np.zeros(n)
    np.add.at(F, mesh.triangles.ravel(), ((w * (R * dR + S * dS)) @ phi).ravel())
    F[o_q:o_r] = -np.sum(w * R, axis=1)
    F[o_r:n] = -np.sum(w * S, axis=1)
    if not with_jacobian:
        return F, None

    d2R = problem.d2rho(uq)
    d2S = problem.d2gamma(uq)
    for arr in (d2R, d2S):
        _check_finite(arr, uq)
    cuu = w * (dR * dR + R * d2R + dS * dS + S * d2S)
    Kuu = np.einsum("tk,ki,kj->tij", cuu, phi, phi)
    Kuq = -(w * dR) @ phi  # (nt, 3)
    Kur = -(w * dS) @ phi
    mass = w.sum(axis=1)

    ldofs = np.column_stack([mesh.triangles, o_q + tid, o_r + tid])  # (nt, 5)
    K = np.zeros((nt, 5, 5))
    K[:, :3, :3] = Kuu
    K[:, :3, 3] = Kuq
    K[:, 3, :3] = Kuq
    K[:, :3, 4] = Kur
    K[:, 4, :3] = Kur
    K[:, 3, 3] = mass
    K[:, 4, 4] = mass
    rows = np.repeat(ldofs, 5, axis=1).ravel()
    cols = np.tile(ldofs, (1, 5)).ravel()
    D = sp.coo_matrix((K.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return F, D


def el_residual(mesh, dofmap, linear: LinearNormalSystem, x, problem) -> np.ndarray:
    """Euler-Lagrange residual on the free DOFs."""
    N, _ = _nonlinear_full(mesh, dofmap, x, problem, False)
    F = linear.A_full @ x - linear.l_full + N
    return F[dofmap.free]


def el_jacobian(mesh, dofmap, linear: LinearNormalSystem, x, problem) -> sp.csr_matrix:
    """Derivative of :func:`el_residual` (symmetric) on the free DOFs."""
    _, D = _nonlinear_full(mesh, dofmap, x, problem, True)
    free = dofmap.free
    J = (linear.A_full + D)[free][:, free]
    return ((J + J.T) * 0.5).tocsr()


def _el_system(mesh, dofmap, linear, x, problem):
    N, D = _nonlinear_full(mesh, dofmap, x, problem, True)
    free = dofmap.free
    F = (linear.A_full @ x - linear.l_full + N)[free]
    J = (linear.A_full + D)[free][:, free]
    return F, ((J + J.T) * 0.5).tocsr()


def initial_guess(mesh: Mesh, dofmap: TrialDofMap, problem: ProblemSpec) -> np.ndarray:
    """Zero flux and element unknowns; nodal Dirichlet data extended by zero."""
    x = np.zeros(dofmap.n_full)
    d = dofmap.dirichlet
    if d.any():
        x[: dofmap.n_vertices][d] = problem.dirichlet(mesh.vertices[d])
    return x


def newton_solve(
    mesh,
    dofmap,
    linear,
    x0,
    problem,
    tol: float = 1e-6,
    maxiter: int = 20,
    line_search: bool = False,
):
    """Full Newton iteration for the Euler-Lagrange equations.

    The stopping quantity is the Newton decrement
    ``lambda = sqrt(|F . J^{-1} F|)``, the predicted drop of ``Res`` in the
    same units as ``Res``.  Iteration ``k`` computes the step from ``x_k``;
    if ``lambda_k < tol`` the iterate ``x_k`` is returned after ``k``
    updates.  Dirichlet slots of ``x0`` are never modified.

    With ``line_search`` the step is halved (at most 8 times) while the
    objective increases.

    Returns ``(x, NewtonReport)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if maxiter < 1:
        raise ValueError("maxiter must be at least 1")
    free = dofmap.free
    x = np.array(x0, dtype=float)
    report = NewtonReport()
    for k in range(maxiter + 1):
        res = global_residual(mesh, dofmap, linear, x, problem)[0]
        F, J = _el_system(mesh, dofmap, linear, x, problem)
        try:
            delta = factor_solve(J, -F)
        except SingularMatrixError as exc:
            raise NewtonSolveError(k, exc) from exc
        lam = float(np.sqrt(abs(F @ delta)))
        report.residuals.append(res)
        report.decrements.append(lam)
        report.el_norms.append(float(np.linalg.norm(F)))
        report.objectives.append(objective(mesh, dofmap, linear, x, problem))
        if k >= 2 and report.objectives[-1] > report.objectives[-2]:
            log.info(
                "objective increased at Newton iterate %d: %.6e -> %.6e",
                k, report.objectives[-2], report.objectives[-1],
            )
        log.debug("newton %d: Res=%.6e decrement=%.3e", k, res, lam)
        if lam < tol:
            report.converged = True
            break
        if k == maxiter:
            break
        step = 1.0
        if line_search:
            phi0 = report.objectives[-1]
            for _ in range(8):
                trial = x.copy()
                trial[free] += step * delta
                if objective(mesh, dofmap, linear, trial, problem) <= phi0:
                    break
                step *= 0.5
        x[free] += step * delta
        report.iterations = k + 1
    u = x[: dofmap.n_vertices]
    report.u_range = (float(u.min()), float(u.max()))
    if not report.converged:
        log.warning("Newton did not converge in %d iterations", maxiter)
    return x, report


@dataclass
class ErrorNorms:
    grad_u: float
    q: float
    r: float
    u_l2: float

    @property
    def combined(self) -> float:
        return float(np.sqrt(self.grad_u**2 + self.q**2 + self.r**2))


def error_norms(mesh: Mesh, dofmap: TrialDofMap, x, problem: ProblemSpec) -> ErrorNorms:
    """Errors of ``u_h``, ``q_h``, ``r_h`` against the exact solution (7-point rule)."""
    if not problem.has_exact:
        raise MissingExactSolutionError(f"problem {problem.name!r} has no exact solution")
    rule = triangle_quadrature("residual-7pt")
    uq, q, r, w, phi = _local_states(mesh, dofmap, x, rule)
    _, _, _, grad = element_geometry(mesh)
    u = dofmap.split(x)[0]
    pts = physical_points(mesh, rule)
    ue = problem.exact_u(pts)
    ge = problem.exact_grad(pts)
    gh = np.einsum("ti,tid->td", u[mesh.triangles], grad)
    eg = np.sum(w * np.sum((ge - gh[:, None, :]) ** 2, axis=-1))
    eq = np.sum(w * (problem.rho(ue) - q[:, None]) ** 2)
    er = np.sum(w * (problem.gamma(ue) - r[:, None]) ** 2)
    eu = np.sum(w * (ue - uq) ** 2)
    return ErrorNorms(*(float(np.sqrt(v)) for v in (eg, eq, er, eu)))
