"""Residual indicators, bulk marking and the solve-estimate-mark-refine loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dpg_core import assemble_linear
from .fespace import build_trial_dofmap
from .mesh2d import Mesh, bisect
from .semilinear import (
    NewtonSolveError,
    error_norms,
    global_residual,
    initial_guess,
    newton_solve,
)

log = logging.getLogger(__name__)


@dataclass
class Indicators:
    per_element: np.ndarray
    total: float
    dual: float
    rho: float
    gamma: float


def compute_indicators(mesh, dofmap, linear, x, problem) -> Indicators:
    """Local residual contributions ``Res(T)``; ``total**2 == sum(per_element**2)``."""
    total, d, a, b, per = global_residual(mesh, dofmap, linear, x, problem)
    return Indicators(per, total, d, a, b)


def doerfler_mark(indicators, theta: float = 0.5) -> np.ndarray:
    """Smallest set with ``sum eta_T^2 >= theta * sum eta^2``.

    Elements are taken by decreasing indicator, ties by ascending index.
    Returns an empty array when all indicators vanish.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    eta = np.asarray(
        indicators.per_element if isinstance(indicators, Indicators) else indicators,
        dtype=float,
    )
    sq = eta**2
    total = sq.sum()
    if total <= 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(eta)), -sq))
    csum = np.cumsum(sq[order])
    k = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return np.sort(order[: min(k, len(eta))])


def element_distance(mesh: Mesh, point=(0.0, 0.0)) -> np.ndarray:
    """Euclidean distance from ``point`` to each closed triangle."""
    x = np.asarray(point, dtype=float)
    P = mesh.vertices[mesh.triangles] - x
    best = np.full(mesh.n_triangles, np.inf)
    for i in range(3):
        a, b = P[:, i], P[:, (i + 1) % 3]
        d = b - a
        t = np.clip(-np.einsum("ij,ij->i", a, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
        best = np.minimum(best, np.linalg.norm(a + t[:, None] * d, axis=1))
    e = P[:, [1, 2, 0]] - P
    inside = np.all(e[..., 0] * -P[..., 1] - e[..., 1] * -P[..., 0] >= 0, axis=1)
    best[inside] = 0.0
    return best


@dataclass
class Concentration:
    marked_share: float  # fraction of marked elements near the point
    element_share: float  # fraction of all elements near the point
    area_share: float  # fraction of the domain area covered by the disk


def marking_concentration(mesh, marked, radius=0.25, point=(0.0, 0.0), disk_area=None):
    """How strongly a mark set clusters within ``radius`` of ``point``.

    ``disk_area`` is the area of the disk intersected with the domain
    (default: the full disk); ``area_share`` is what quasi-uniform marking
    would give.
    """
    near = element_distance(mesh, point) <= radius
    marked = np.asarray(marked, dtype=np.int64)
    if disk_area is None:
        disk_area = np.pi * radius**2
    return Concentration(
        float(near[marked].mean()) if marked.size else 0.0,
        float(near.mean()),
        float(disk_area / mesh.areas.sum()),
    )


@dataclass
class ConvergenceRecord:
    step: int
    N: int
    dofs: int
    newton_iters: int
    res_dual: float
    res_rho: float
    res_gamma: float
    Res: float
    err_grad_u: float = float("nan")
    err_q: float = float("nan")
    err_r: float = float("nan")
    err_u_L2: float = float("nan")
    err_U: float = float("nan")
    converged: bool = True
    newton_decrement: float = float("nan")  # at the returned iterate
    el_norm: float = float("nan")
    seconds: float = 0.0
    newton_residuals: list = field(default_factory=list, repr=False)


@dataclass
class LoopResult:
    records: list
    meshes: list
    solutions: list
    marked: list  # marked element indices per step (relative to that step's mesh)
    indicators: list = field(default_factory=list)  # per-element Res(T) per step
    failed: bool = False
    message: str = ""

    @property
    def mesh(self) -> Mesh:
        return self.meshes[-1]

    @property
    def solution(self):
        return self.solutions[-1]


def solve_on_mesh(mesh, problem, tol=1e-6, maxiter=20, line_search=False):
    dofmap = build_trial_dofmap(mesh, True)
    linear = assemble_linear(mesh, dofmap, problem)
    x0 = initial_guess(mesh, dofmap, problem)
    x, report = newton_solve(
        mesh, dofmap, linear, x0, problem, tol=tol, maxiter=maxiter, line_search=line_search
    )
    return dofmap, linear, x, report


def adapt_loop(
    problem,
    mesh: Mesh,
    mode: str = "uniform",
    theta: float = 0.5,
    max_elements: int = 100_000,
    max_steps: int | None = None,
    tol: float = 1e-6,
    maxiter: int = 20,
    line_search: bool = False,
    keep_history: bool = False,
    on_record=None,
) -> LoopResult:
    """Run the refinement loop until ``max_elements`` or ``max_steps``.

    ``uniform`` marks every element; ``adaptive`` uses bulk marking with
    ``theta``.  Marked elements are split into four children by newest
    vertex bisection (all three edges bisected) plus conforming closure.
    Each mesh starts Newton from :func:`initial_guess`.  A mesh whose next
    refinement would exceed ``max_elements`` is not solved.
    """
    if mode not in ("uniform", "adaptive"):
        raise ValueError(f"unknown mode {mode!r}")
    if max_elements < 1 or (max_steps is not None and max_steps < 1):
        raise ValueError("limits must be positive")
    result = LoopResult([], [], [], [])
    step = 0
    while True:
        t0 = time.perf_counter()
        try:
            dofmap, linear, x, report = solve_on_mesh(mesh, problem, tol, maxiter, line_search)
        except NewtonSolveError as exc:
            result.failed, result.message = True, str(exc)
            log.error("step %d: %s", step, exc)
            break
        ind = compute_indicators(mesh, dofmap, linear, x, problem)
        rec = ConvergenceRecord(
            step=step,
            N=mesh.n_triangles,
            dofs=dofmap.n_free,
            newton_iters=report.iterations,
            res_dual=ind.dual,
            res_rho=ind.rho,
            res_gamma=ind.gamma,
            Res=ind.total,
            converged=report.converged,
            newton_decrement=report.decrements[-1],
            el_norm=report.el_norms[-1],
            newton_residuals=list(report.residuals),
        )
        if problem.has_exact:
            err = error_norms(mesh, dofmap, x, problem)
            rec.err_grad_u, rec.err_q, rec.err_r = err.grad_u, err.q, err.r
            rec.err_u_L2, rec.err_U = err.u_l2, err.combined
        rec.seconds = time.perf_counter() - t0
        result.records.append(rec)
        result.indicators.append(ind.per_element)
        result.meshes.append(mesh)
        result.solutions.append((dofmap, x))
        if not keep_history and len(result.meshes) > 1:
            result.meshes = result.meshes[-1:]
            result.solutions = result.solutions[-1:]
        log.info(
            "step %d: N=%d dofs=%d newton=%d Res=%.4e",
            step, rec.N, rec.dofs, rec.newton_iters, rec.Res,
        )
        if on_record is not None:
            on_record(rec)
        if not report.converged:
            result.failed = True
            result.message = f"Newton did not converge on step {step}"
            break
        step += 1
        if max_steps is not None and step >= max_steps:
            break
        if mode == "uniform":
            marked = np.arange(mesh.n_triangles)
        else:
            marked = doerfler_mark(ind, theta)
        if marked.size == 0:
            break
        new_mesh = bisect(mesh, marked, mode="bisec3")
        if new_mesh.n_triangles > max_elements:
            break
        result.marked.append(marked)
        mesh = new_mesh
    return result
