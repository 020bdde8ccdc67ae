"""Conforming triangular meshes with newest-vertex bisection.

Conventions
-----------
* Triangles are stored counter-clockwise as ``(n, a, b)`` where ``n`` is the
  newest vertex and ``(a, b)`` is the refinement edge opposite to it.
* Local facet ``i`` of a triangle is the edge opposite its local vertex ``i``,
  so local facet 0 is always the refinement edge.
* Every facet has a canonical orientation from its lower to its higher global
  vertex index.  Its canonical unit normal is that direction rotated by -90
  degrees, i.e. ``(dx, dy) -> (dy, -dx)``.  ``signs[t, i]`` is +1 when the
  canonical normal of local facet ``i`` points out of triangle ``t``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# local facet i joins local vertices _FACET_VERTS[i] (counter-clockwise traversal)
_FACET_VERTS = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable conforming triangulation.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise, newest vertex first.
    parent : (nt,) int array, optional
        Index of the triangle in the previous mesh each triangle descends
        from.  Only set for meshes produced by :func:`bisect`.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    parent: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must have shape (nt, 3)")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if np.any(self.areas <= 0.0):
            bad = np.flatnonzero(self.areas <= 0.0)
            raise ValueError(f"triangles {bad[:10].tolist()} have non-positive area")

    def __repr__(self):
        return f"Mesh(nv={self.n_vertices}, nt={self.n_triangles}, nf={self.n_facets})"

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facets.shape[0]

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def _topology(self):
        t = self.triangles
        ends = t[:, _FACET_VERTS]  # (nt, 3, 2) in traversal order
        lo = ends.min(axis=2)
        hi = ends.max(axis=2)
        keys = lo.ravel() * self.n_vertices + hi.ravel()
        uniq, inverse = np.unique(keys, return_inverse=True)
        facets = np.column_stack([uniq // self.n_vertices, uniq % self.n_vertices])
        t2f = inverse.reshape(-1, 3)
        signs = np.where(ends[:, :, 0] < ends[:, :, 1], 1, -1)

        counts = np.bincount(inverse, minlength=len(uniq))
        if np.any(counts > 2):
            raise ValueError("facet shared by more than two triangles")
        f2t = -np.ones((len(uniq), 2), dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        tri_of = order // 3
        sorted_f = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_f[1:] != sorted_f[:-1]
        f2t[sorted_f[first], 0] = tri_of[first]
        f2t[sorted_f[~first], 1] = tri_of[~first]
        return facets, t2f, signs, f2t

    @property
    def facets(self) -> np.ndarray:
        """(nf, 2) vertex pairs, lower index first."""
        return self._topology[0]

    @property
    def t2f(self) -> np.ndarray:
        """(nt, 3) global facet index of each local facet."""
        return self._topology[1]

    @property
    def signs(self) -> np.ndarray:
        """(nt, 3) orientation signs in {+1, -1}."""
        return self._topology[2]

    @property
    def f2t(self) -> np.ndarray:
        """(nf, 2) incident triangles; second column is -1 on the boundary."""
        return self._topology[3]

    @cached_property
    def boundary_facets(self) -> np.ndarray:
        return self.f2t[:, 1] < 0

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.facets[self.boundary_facets].ravel()] = True
        return mask

    @cached_property
    def facet_lengths(self) -> np.ndarray:
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Canonical unit normals, (nf, 2)."""
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.column_stack([d[:, 1], -d[:, 0]]) / self.facet_lengths[:, None]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def min_angle(self) -> float:
        p = self.vertices[self.triangles]
        worst = np.pi
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            w = p[:, (i + 2) % 3] - p[:, i]
            c = np.einsum("ij,ij->i", u, w) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1)
            )
            worst = min(worst, float(np.arccos(np.clip(c, -1, 1)).min()))
        return worst


def facet_sign(mesh: Mesh, triangle: int, local_facet: int) -> int:
    """Orientation sign of ``local_facet`` of ``triangle`` (see module docs)."""
    return int(mesh.signs[triangle, local_facet])


def _assign_refinement_edges(vertices, triangles):
    """Reorder each triangle so its longest edge is the refinement edge.

    Ties go to the edge with the smaller global facet index.
    """
    vertices = np.asarray(vertices, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64).copy()
    p = vertices[tris]
    cross = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    cw = cross < 0
    tris[cw] = tris[cw][:, [0, 2, 1]]

    nv = len(vertices)
    ends = tris[:, _FACET_VERTS]
    keys = ends.min(axis=2) * nv + ends.max(axis=2)
    _, fidx = np.unique(keys.ravel(), return_inverse=True)
    fidx = fidx.reshape(-1, 3)
    d = vertices[ends[:, :, 1]] - vertices[ends[:, :, 0]]
    length = np.hypot(d[..., 0], d[..., 1])
    # lexicographic: longest first (with relative tolerance), then smallest facet index
    tol = 1e-12 * length.max(axis=1, keepdims=True)
    best = np.zeros(len(tris), dtype=np.int64)
    for i in (1, 2):
        longer = length[:, i] > length[np.arange(len(tris)), best] + tol[:, 0]
        tie = np.abs(length[:, i] - length[np.arange(len(tris)), best]) <= tol[:, 0]
        smaller = fidx[:, i] < fidx[np.arange(len(tris)), best]
        best = np.where(longer | (tie & smaller), i, best)
    # cyclic shift keeps counter-clockwise orientation
    shift = (np.arange(3)[None, :] + best[:, None]) % 3
    return np.take_along_axis(tris, shift, axis=1)


def from_arrays(vertices, triangles) -> Mesh:
    """Mesh with refinement edges seeded on the longest edge of each triangle."""
    return Mesh(vertices, _assign_refinement_edges(vertices, triangles))


def _grid(nx, ny, x0, y0, h):
    xs = x0 + h * np.arange(nx + 1)
    ys = y0 + h * np.arange(ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


def build_unit_square(n: int) -> Mesh:
    """Uniform mesh of (0, 1)^2 with 2 n^2 triangles.

    Each cell is split along its diagonal from lower-left to upper-right.
    """
    n = int(n)
    if n < 1:
        raise ValueError("subdivision count must be at least 1")
    verts = _grid(n, n, 0.0, 0.0, 1.0 / n)
    tris = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return from_arrays(verts, np.array(tris))


def build_lshape(n: int) -> Mesh:
    """Uniform mesh of (-1,1)^2 minus [0,1)x(-1,0], 3 * 2 n^2 triangles.

    Diagonals in every cell point towards or away from the origin, so the
    reentrant corner sits at the apex of its neighbouring triangles.
    """
    n = int(n)
    if n < 1:
        raise ValueError("subdivision count must be at least 1")
    h = 1.0 / n
    index = {}
    verts = []

    def vid(i, j):
        key = (i, j)
        if key not in index:
            index[key] = len(verts)
            verts.append((i * h, j * h))
        return index[key]

    tris = []
    for j in range(-n, n):
        for i in range(-n, n):
            if i >= 0 and j < 0:
                continue
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            # diagonal along x = y in quadrants 1 and 3, along x = -y in quadrant 2
            if (i < 0) == (j < 0):
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return from_arrays(np.array(verts, dtype=float), np.array(tris))


def _bisect_step(tris, refine, mid_of):
    """Bisect ``tris[refine]`` on their refinement edge."""
    t = tris[refine]
    m = mid_of(t[:, 1], t[:, 2])
    c1 = np.column_stack([m, t[:, 0], t[:, 1]])
    c2 = np.column_stack([m, t[:, 2], t[:, 0]])
    return c1, c2


def bisect(mesh: Mesh, marked, *, mode: str = "single") -> Mesh:
    """Refine ``mesh`` by newest-vertex bisection with conforming closure.

    ``mode="single"`` bisects every marked triangle once (its refinement
    edge is marked).  ``mode="bisec3"`` marks all three edges of each marked
    triangle, so it is split into four children.  Closure then marks the
    refinement edge of every triangle that has some marked edge until the
    marked edge set is stable; the result is conforming.

    The returned mesh carries ``parent``, the index in ``mesh`` of the
    triangle each new triangle came from.
    """
    marked = np.unique(np.asarray(marked, dtype=np.int64).ravel())
    if marked.size == 0:
        warnings.warn("empty mark set, mesh left unchanged", stacklevel=2)
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise IndexError("marked triangle index out of range")
    if mode not in ("single", "bisec3"):
        raise ValueError(f"unknown bisection mode {mode!r}")

    t2f = mesh.t2f
    edge_marked = np.zeros(mesh.n_facets, dtype=bool)
    if mode == "single":
        edge_marked[t2f[marked, 0]] = True
    else:
        edge_marked[t2f[marked].ravel()] = True
    while True:
        need = edge_marked[t2f].any(axis=1) & ~edge_marked[t2f[:, 0]]
        if not need.any():
            break
        edge_marked[t2f[need, 0]] = True

    nv = mesh.n_vertices
    ref_facets = np.flatnonzero(edge_marked)
    ends = mesh.facets[ref_facets]
    new_pts = 0.5 * (mesh.vertices[ends[:, 0]] + mesh.vertices[ends[:, 1]])
    new_ids = nv + np.arange(len(ref_facets))
    keys = ends[:, 0] * nv + ends[:, 1]  # sorted since facets are sorted by key

    def mid_of(a, b):
        k = np.minimum(a, b) * nv + np.maximum(a, b)
        pos = np.searchsorted(keys, k)
        pos = np.minimum(pos, len(keys) - 1)
        ok = keys[pos] == k
        return np.where(ok, new_ids[pos], -1)

    tris = mesh.triangles
    parent = np.arange(mesh.n_triangles)
    # two passes suffice: children's refinement edges are the parent's
    # other two edges, grandchildren's are new or halved edges
    for _ in range(2):
        refine = mid_of(tris[:, 1], tris[:, 2]) >= 0
        if not refine.any():
            break
        c1, c2 = _bisect_step(tris, refine, mid_of)
        keep = ~refine
        tris = np.vstack([tris[keep], c1, c2])
        parent = np.concatenate([parent[keep], parent[refine], parent[refine]])
    # children of the same parent next to each other, parents in order
    order = np.argsort(parent, kind="stable")
    verts = np.vstack([mesh.vertices, new_pts])
    return Mesh(verts, tris[order], parent=parent[order])


def refine_uniform(mesh: Mesh, sweeps: int = 1) -> Mesh:
    """Apply ``sweeps`` mark-all single-bisection passes."""
    for _ in range(sweeps):
        mesh = bisect(mesh, np.arange(mesh.n_triangles))
    return mesh


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text dump: ``vertices <nv> triangles <nt>``, then ``x y`` and ``v0 v1 v2`` rows."""
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.n_vertices} triangles {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "vertices" or header[2] != "triangles":
            raise ValueError(f"{path}: malformed mesh header")
        nv, nt = int(header[1]), int(header[3])
        verts = np.array(
            [[float(s) for s in fh.readline().split()] for _ in range(nv)]
        ).reshape(nv, 2)
        tris = np.array(
            [[int(s) for s in fh.readline().split()] for _ in range(nt)], dtype=np.int64
        ).reshape(nt, 3)
    return Mesh(verts, tris)
