"""Element-local DPG matrices and the normal equations of the linear part.

For every element ``T`` with local test basis ``v_i`` (see
:class:`~semilinear_dpg.fespace.TestBasis`) and local trial ordering
``(u0, u1, u2, s0, s1, s2, q, r)``::

    G_T[i, j] = (v_i, v_j)_T + (grad v_i, grad v_j)_T
    B_T[i, :] = (kappa grad u + q beta, grad v_i)_T - <s, v_i>_dT + (r, v_i)_T
    L_T[i]    = (f, v_i)_T

The optimal-test-function system is realised by the normal equations
``A = sum_T B_T^T G_T^{-1} B_T`` and ``l = sum_T B_T^T G_T^{-1} L_T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fespace import (
    TestBasis,
    TrialDofMap,
    edge_gauss,
    element_geometry,
    physical_points,
    triangle_quadrature,
)
from .mesh2d import _FACET_VERTS, Mesh


class DegenerateElementError(ArithmeticError):
    """Local Gram matrix could not be factorised."""

    def __init__(self, element, msg="degenerate element"):
        super().__init__(f"{msg} (element {element})")
        self.element = element


def _select(mesh: Mesh, elements):
    if elements is None:
        return np.arange(mesh.n_triangles)
    return np.atleast_1d(np.asarray(elements, dtype=np.int64))


def _kappa_at(kappa, pts):
    """Evaluate kappa at points (..., 2) -> (..., 2, 2)."""
    if kappa is None:
        return np.broadcast_to(np.eye(2), pts.shape[:-1] + (2, 2))
    if callable(kappa):
        K = np.asarray(kappa(pts), dtype=float)
    else:
        K = np.asarray(kappa, dtype=float)
    return np.broadcast_to(K, pts.shape[:-1] + (2, 2))


def local_gram(mesh: Mesh, elements=None):
    """Gram matrices of the broken H^1 inner product and their Cholesky factors.

    Returns ``(G, C)`` with shapes (k, 4, 4) and ``G = C C^T``.
    """
    el = _select(mesh, elements)
    rule = triangle_quadrature("assembly")
    basis = TestBasis(mesh)
    area = basis.area[el]
    vals = TestBasis.values(rule.points)  # (nq, 4)
    grads = basis.gradients(rule.points)[el]  # (k, nq, 4, 2)
    w = rule.weights
    mass = np.einsum("q,qi,qj->ij", w, vals, vals)[None] * (2.0 * area)[:, None, None]
    stiff = np.einsum("q,tqid,tqjd->tij", w, grads, grads) * (2.0 * area)[:, None, None]
    G = mass + stiff
    G = 0.5 * (G + G.transpose(0, 2, 1))
    try:
        C = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        bad = [int(e) for e, g in zip(el, G) if np.linalg.eigvalsh(g)[0] <= 0]
        raise DegenerateElementError(bad[0] if bad else el[0]) from None
    return G, C


def local_B(mesh: Mesh, kappa=None, beta=(0.0, 0.0), elements=None) -> np.ndarray:
    """(k, 4, 8) local matrices of the bilinear form."""
    el = _select(mesh, elements)
    beta = np.asarray(beta, dtype=float)
    rule = triangle_quadrature("assembly")
    basis = TestBasis(mesh)
    area = basis.area[el]
    gtrial = basis.grad_bary[el]  # (k, 3, 2)
    gtest = basis.gradients(rule.points)[el]  # (k, nq, 4, 2)
    vals = TestBasis.values(rule.points)
    jw = rule.weights[None, :] * (2.0 * area)[:, None]  # (k, nq)

    pts = physical_points(mesh, rule)[el]
    K = _kappa_at(kappa, pts)
    if kappa is not None:
        sym = np.abs(K - np.swapaxes(K, -1, -2)).max(initial=0.0)
        if sym > 1e-12 * max(1.0, np.abs(K).max()):
            raise ValueError("kappa is not symmetric at some quadrature point")
        if np.linalg.eigvalsh(np.asarray(K).reshape(-1, 2, 2)).min() <= 0.0:
            raise ValueError("kappa is not positive definite at some quadrature point")

    B = np.zeros((len(el), 4, 8))
    flux = np.einsum("tqab,tjb->tqja", K, gtrial)  # kappa grad u_j
    B[:, :, 0:3] = np.einsum("tq,tqia,tqja->tij", jw, gtest, flux)

    s, ws = edge_gauss(4)
    lengths = mesh.facet_lengths[mesh.t2f[el]]  # (k, 3)
    signs = mesh.signs[el]
    for k in range(3):
        a, b = _FACET_VERTS[k]
        bary = np.zeros((len(s), 3))
        bary[:, a] = 1.0 - s
        bary[:, b] = s
        trace = ws @ TestBasis.values(bary)  # (4,) integral over unit-length edge
        B[:, :, 3 + k] = -(signs[:, k] * lengths[:, k])[:, None] * trace[None, :]

    B[:, :, 6] = np.einsum("tq,tqia,a->ti", jw, gtest, beta)
    B[:, :, 7] = jw @ vals
    return B


def local_load(mesh: Mesh, f, elements=None) -> np.ndarray:
    """(k, 4) load vectors ``(f, v_i)_T`` with the 7-point rule."""
    el = _select(mesh, elements)
    rule = triangle_quadrature("residual-7pt")
    _, _, area, _ = element_geometry(mesh)
    pts = physical_points(mesh, rule)[el]
    fv = np.broadcast_to(np.asarray(f(pts), dtype=float), pts.shape[:-1])
    jw = rule.weights[None, :] * (2.0 * area[el])[:, None]
    return np.einsum("tq,tq,qi->ti", jw, fv, TestBasis.values(rule.points))


@dataclass
class LinearNormalSystem:
    """Normal equations of the linear part on one mesh.

    ``A_full`` and ``l_full`` act on the full coefficient vector, Dirichlet
    slots included; :attr:`matrix` and :meth:`rhs` restrict to free DOFs.
    """

    dofmap: TrialDofMap
    G: np.ndarray
    C: np.ndarray
    B: np.ndarray
    L: np.ndarray
    dofs: np.ndarray
    A_full: sp.csr_matrix
    l_full: np.ndarray

    @property
    def matrix(self) -> sp.csr_matrix:
        free = self.dofmap.free
        return self.A_full[free][:, free].tocsr()

    def rhs(self, x: np.ndarray) -> np.ndarray:
        """Right-hand side on free DOFs with Dirichlet values of ``x`` lifted."""
        free = self.dofmap.free
        xd = np.array(x, dtype=float)
        xd[free] = 0.0
        return (self.l_full - self.A_full @ xd)[free]

    def solve_g(self, rhs: np.ndarray) -> np.ndarray:
        """Apply G_T^{-1} elementwise to (nt, 4, ...) data."""
        return np.linalg.solve(self.G, rhs)


def assemble_linear(mesh: Mesh, dofmap: TrialDofMap, problem) -> LinearNormalSystem:
    G, C = local_gram(mesh)
    B = local_B(mesh, problem.kappa, problem.beta)
    L = local_load(mesh, problem.f)
    GiB = np.linalg.solve(G, B)
    GiL = np.linalg.solve(G, L[:, :, None])[:, :, 0]
    A_loc = np.einsum("tia,tib->tab", B, GiB)
    A_loc = 0.5 * (A_loc + A_loc.transpose(0, 2, 1))
    l_loc = np.einsum("tia,ti->ta", B, GiL)

    dofs = dofmap.element_dofs(mesh)
    n = dofmap.n_full
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    A = sp.coo_matrix((A_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    l = np.zeros(n)
    np.add.at(l, dofs.ravel(), l_loc.ravel())
    return LinearNormalSystem(dofmap, G, C, B, L, dofs, A, l)


def dual_residual(linear: LinearNormalSystem, x: np.ndarray, scale: float = 1.0):
    """Discrete dual norm of ``B x - scale * L``.

    Returns ``(global, per_element)`` with ``global**2 == sum(per_element**2)``.
    """
    res = np.einsum("tij,tj->ti", linear.B, x[linear.dofs]) - scale * linear.L
    sq = np.einsum("ti,ti->t", res, np.linalg.solve(linear.G, res[:, :, None])[:, :, 0])
    per = np.sqrt(np.maximum(sq, 0.0))
    return float(np.sqrt(np.sum(per**2))), per
