"""Quadrature, shape functions and DOF bookkeeping for the lowest-order spaces.

Trial space per element: three P1 vertex hats (globally continuous), one
constant per facet for the flux trace and two element constants.  Test
space per element: the three barycentric coordinates plus the cubic
element bubble ``27 l0 l1 l2`` (value 1 at the centroid).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .mesh2d import Mesh


@dataclass(frozen=True)
class QuadRule:
    """Rule on the reference triangle ``{(x, y): x, y >= 0, x + y <= 1}``.

    ``points`` are barycentric coordinates ``(l0, l1, l2)`` with
    ``x = l1``, ``y = l2``; ``weights`` sum to 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, 1:]

    def __len__(self):
        return len(self.weights)


def _orbit3(a):
    """The three permutations of barycentric point (a, a, 1 - 2a)."""
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


@lru_cache(maxsize=None)
def _midpoint_rule():
    pts = np.array([(0.0, 0.5, 0.5), (0.5, 0.0, 0.5), (0.5, 0.5, 0.0)])
    return QuadRule(pts, np.full(3, 1.0 / 6.0), 2)


@lru_cache(maxsize=None)
def _seven_point_rule():
    s = np.sqrt(15.0)
    a1, a2 = (6.0 - s) / 21.0, (6.0 + s) / 21.0
    w1, w2 = (155.0 - s) / 1200.0, (155.0 + s) / 1200.0
    pts = [(1 / 3, 1 / 3, 1 / 3)] + _orbit3(a1) + _orbit3(a2)
    w = [9.0 / 40.0] + [w1] * 3 + [w2] * 3
    return QuadRule(np.array(pts), 0.5 * np.array(w), 5)


@lru_cache(maxsize=None)
def collapsed_gauss(n: int) -> QuadRule:
    """Conical product rule with n^2 points, exact to degree 2n - 1.

    Gauss-Jacobi in the collapsed direction absorbs the Duffy factor (1 - s).
    """
    if n < 1:
        raise ValueError("need at least one point")
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xj + 1.0)
    ws = 0.25 * wj
    g, wg = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (g + 1.0)
    wt = 0.5 * wg
    S, T = np.meshgrid(s, t, indexing="ij")
    WS, WT = np.meshgrid(ws, wt, indexing="ij")
    x = S.ravel()
    y = (T * (1.0 - S)).ravel()
    w = (WS * WT).ravel()
    pts = np.column_stack([1.0 - x - y, x, y])
    return QuadRule(pts, w, 2 * n - 1)


_KINDS = {
    "nonlinear-3pt": _midpoint_rule,
    "residual-7pt": _seven_point_rule,
    "assembly": lambda: collapsed_gauss(4),
}


def triangle_quadrature(kind: str) -> QuadRule:
    """``"nonlinear-3pt"`` (degree 2), ``"residual-7pt"`` (degree 5) or
    ``"assembly"`` (degree 7, used for Gram and B matrices)."""
    try:
        return _KINDS[kind]()
    except KeyError:
        raise ValueError(f"unknown quadrature kind {kind!r}") from None


@lru_cache(maxsize=None)
def edge_gauss(n: int):
    """Gauss-Legendre rule on [0, 1]; returns (points, weights)."""
    if n < 1:
        raise ValueError("need at least one point")
    g, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (g + 1.0), 0.5 * w


def element_geometry(mesh: Mesh):
    """Per-element affine data.

    Returns ``(p0, J, area, grad_bary)`` with ``x = p0 + J @ (x_ref, y_ref)``
    and ``grad_bary[t, i]`` the constant gradient of barycentric ``l_i``.
    """
    p = mesh.vertices[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    # rows of J^{-1} are gradients of l1, l2
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    grad = np.empty((len(p), 3, 2))
    grad[:, 1] = inv[:, 0]
    grad[:, 2] = inv[:, 1]
    grad[:, 0] = -grad[:, 1] - grad[:, 2]
    return p[:, 0], J, 0.5 * det, grad


def physical_points(mesh: Mesh, rule: QuadRule) -> np.ndarray:
    """(nt, nq, 2) quadrature points on every element."""
    p = mesh.vertices[mesh.triangles]
    return np.einsum("qi,tid->tqd", rule.points, p)


class TestBasis:
    """Local test basis ``(l0, l1, l2, bubble)`` on a set of elements."""

    dim = 4
    __test__ = False  # not a pytest class

    def __init__(self, mesh: Mesh):
        _, _, self.area, self.grad_bary = element_geometry(mesh)

    @staticmethod
    def values(bary: np.ndarray) -> np.ndarray:
        """(nq, 4) values at barycentric points (same on every element)."""
        bary = np.atleast_2d(bary)
        bub = 27.0 * bary[:, 0] * bary[:, 1] * bary[:, 2]
        return np.column_stack([bary, bub])

    def gradients(self, bary: np.ndarray) -> np.ndarray:
        """(nt, nq, 4, 2) gradients at barycentric points."""
        bary = np.atleast_2d(bary)
        g = self.grad_bary  # (nt, 3, 2)
        nt, nq = len(g), len(bary)
        out = np.empty((nt, nq, 4, 2))
        out[:, :, :3] = g[:, None]
        l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
        coef = 27.0 * np.column_stack([l1 * l2, l0 * l2, l0 * l1])  # (nq, 3)
        out[:, :, 3] = np.einsum("qi,tid->tqd", coef, g)
        return out


@dataclass(frozen=True)
class TrialDofMap:
    """Layout of the full coefficient vector ``[u | sigma | q | r]``.

    ``u`` has one slot per vertex; slots of Dirichlet vertices are fixed.
    ``free`` lists the indices of the unknowns in increasing order, so the
    free vector is ordered u-free, sigma, q, r.
    """

    n_vertices: int
    n_facets: int
    n_triangles: int
    dirichlet: np.ndarray  # bool per vertex

    @property
    def offsets(self):
        """Start index of the u, sigma, q, r blocks and the total size."""
        o_s = self.n_vertices
        o_q = o_s + self.n_facets
        o_r = o_q + self.n_triangles
        return o_s, o_q, o_r, o_r + self.n_triangles

    @property
    def n_full(self) -> int:
        return self.offsets[3]

    @property
    def n_free_u(self) -> int:
        return int(self.n_vertices - self.dirichlet.sum())

    @property
    def n_free(self) -> int:
        return self.n_free_u + self.n_facets + 2 * self.n_triangles

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n_full, dtype=bool)
        mask[: self.n_vertices] = ~self.dirichlet
        return np.flatnonzero(mask)

    @property
    def block_sizes(self) -> dict:
        return {
            "u": self.n_free_u,
            "sigma": self.n_facets,
            "q": self.n_triangles,
            "r": self.n_triangles,
        }

    def block_of(self, free_index: int) -> str:
        """Name of the block a free DOF index belongs to."""
        if not 0 <= free_index < self.n_free:
            raise IndexError(free_index)
        edges = np.cumsum(list(self.block_sizes.values()))
        return list(self.block_sizes)[int(np.searchsorted(edges, free_index, side="right"))]

    def split(self, x: np.ndarray):
        """Views ``(u, sigma, q, r)`` into a full coefficient vector."""
        o_s, o_q, o_r, n = self.offsets
        return x[:o_s], x[o_s:o_q], x[o_q:o_r], x[o_r:n]

    def element_dofs(self, mesh: Mesh) -> np.ndarray:
        """(nt, 8) full-vector indices in local order u0 u1 u2 s0 s1 s2 q r."""
        o_s, o_q, o_r, _ = self.offsets
        t = np.arange(mesh.n_triangles)
        return np.column_stack(
            [mesh.triangles, o_s + mesh.t2f, o_q + t, o_r + t]
        ).astype(np.int64)


def build_trial_dofmap(mesh: Mesh, dirichlet=True) -> TrialDofMap:
    """DOF map with Dirichlet vertices chosen by ``dirichlet``.

    ``True`` fixes every boundary vertex, ``False``/``None`` none, and a
    callable receives the (k, 2) boundary vertex coordinates and returns a
    boolean mask selecting the Dirichlet ones.
    """
    bnd = mesh.boundary_vertices
    if dirichlet is True:
        mask = bnd.copy()
    elif dirichlet is None or dirichlet is False:
        mask = np.zeros(mesh.n_vertices, dtype=bool)
    elif callable(dirichlet):
        mask = np.zeros(mesh.n_vertices, dtype=bool)
        idx = np.flatnonzero(bnd)
        mask[idx] = np.asarray(dirichlet(mesh.vertices[idx]), dtype=bool)
    else:
        raise TypeError("dirichlet must be a bool, None or a callable")
    return TrialDofMap(mesh.n_vertices, mesh.n_facets, mesh.n_triangles, mask)


def eval_trial(mesh: Mesh, element: int, point):
    """Trial shape functions of ``element`` at physical ``point``.

    Returns a dict with hat values (3,) and gradients (3, 2), the facet
    indicator constants with the orientation sign folded in (3,), and the
    two element constants.
    """
    tri = mesh.triangles[element]
    p = mesh.vertices[tri]
    M = np.array([[1, 1, 1], p[:, 0], p[:, 1]], dtype=float)
    lam = np.linalg.solve(M, np.array([1.0, point[0], point[1]]))
    grad = np.linalg.inv(M)[:, 1:]
    return {
        "hat": lam,
        "hat_grad": grad,
        "facet": mesh.signs[element].astype(float),
        "element": np.ones(2),
    }
