"""Meshes: nested triangulations of the dodecagon and uniform grids on the unit square.

The computational domain is a regular dodecagon centered at (0.5, 0.5) with
radius 0.5, contained in the unit square. Refinement is uniform (each triangle
split into 4 via edge midpoints), so all levels of a family are exactly nested
and node indices of a coarse mesh are a prefix of those of its refinement.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, LocationError

MAX_LEVEL = 12
_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangle mesh with positively oriented (CCW) triangles.

    ``parent``/``midpoint_edges`` record the refinement lineage: nodes
    ``len(parent.nodes):`` are midpoints of the parent edges listed in
    ``midpoint_edges`` (same order).
    """

    nodes: np.ndarray            # (n, 2) float64
    triangles: np.ndarray        # (t, 3) int32, CCW
    boundary_nodes: np.ndarray   # sorted int32
    level: int
    h_max: float
    family: str = "custom"
    parent: Optional["Mesh"] = None
    midpoint_edges: Optional[np.ndarray] = None

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]


@dataclass(frozen=True, eq=False)
class UniformGrid:
    """Uniform right-triangle grid on [0,1]^2 with (2^level + 1)^2 nodes.

    Node (i, j) sits at (i*spacing, j*spacing) and has flat index
    i*n_per_axis + j; nodal fields are interchangeably (n, n) arrays in the
    same (i, j) layout or flat vectors in C order.
    """

    level: int
    n_per_axis: int
    spacing: float
    mesh: Mesh


def _freeze(arr):
    arr.setflags(write=False)
    return arr


def signed_areas(nodes, triangles):
    p0 = nodes[triangles[:, 0]]
    p1 = nodes[triangles[:, 1]]
    p2 = nodes[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))


def triangle_areas(mesh):
    return signed_areas(mesh.nodes, mesh.triangles)


def mesh_edges(triangles):
    """Unique edges as sorted index pairs, plus the triangle count per edge."""
    raw = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    raw.sort(axis=1)
    edges, counts = np.unique(raw, axis=0, return_counts=True)
    return edges, counts


def edge_lengths(mesh):
    edges, _ = mesh_edges(mesh.triangles)
    d = mesh.nodes[edges[:, 0]] - mesh.nodes[edges[:, 1]]
    return np.hypot(d[:, 0], d[:, 1])


def _build_mesh(nodes, triangles, level, family, parent=None, midpoint_edges=None):
    nodes = _freeze(np.ascontiguousarray(nodes, dtype=np.float64))
    triangles = _freeze(np.ascontiguousarray(triangles, dtype=np.int32))
    if not np.all(np.isfinite(nodes)):
        raise ConfigurationError("mesh nodes must have finite coordinates")
    if np.any(signed_areas(nodes, triangles) <= 0.0):
        raise ConfigurationError("all triangles must be positively oriented")
    edges, counts = mesh_edges(triangles)
    boundary = _freeze(np.unique(edges[counts == 1]).astype(np.int32))
    d = nodes[edges[:, 0]] - nodes[edges[:, 1]]
    h_max = float(np.hypot(d[:, 0], d[:, 1]).max())
    if midpoint_edges is not None:
        midpoint_edges = _freeze(np.ascontiguousarray(midpoint_edges, dtype=np.int32))
    return Mesh(nodes, triangles, boundary, level, h_max, family, parent, midpoint_edges)


def _check_level(level):
    if not (isinstance(level, (int, np.integer)) and 0 <= level <= MAX_LEVEL):
        raise ConfigurationError(f"level must be an integer in [0, {MAX_LEVEL}], got {level!r}")


def unit_square_grid(level):
    """Uniform grid on the unit square: (2^level+1)^2 nodes, 2*4^level triangles."""
    _check_level(level)
    n = 2 ** level + 1
    spacing = 2.0 ** (-level)
    coords = np.arange(n) * spacing
    xi, yj = np.meshgrid(coords, coords, indexing="ij")
    nodes = np.column_stack([xi.ravel(), yj.ravel()])

    ii, jj = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
    v00 = (ii * n + jj).ravel()
    v10 = v00 + n
    v01 = v00 + 1
    v11 = v10 + 1
    lower = np.column_stack([v00, v10, v01])
    upper = np.column_stack([v10, v11, v01])
    tris = np.empty((2 * lower.shape[0], 3), dtype=np.int64)
    tris[0::2] = lower
    tris[1::2] = upper
    mesh = _build_mesh(nodes, tris, level, "square")
    return UniformGrid(level, n, spacing, mesh)


def dodecagon_mesh(level):
    """Nested triangulation of the regular dodecagon; level 0 is a 12-triangle fan."""
    _check_level(level)
    return dodecagon_hierarchy(level)[-1]


def dodecagon_hierarchy(max_level):
    """Meshes for levels 0..max_level, chained by refinement (for exact prolongation)."""
    _check_level(max_level)
    angles = 2.0 * np.pi * np.arange(12) / 12.0
    ring = 0.5 + 0.5 * np.column_stack([np.cos(angles), np.sin(angles)])
    nodes = np.vstack([[[0.5, 0.5]], ring])
    k = np.arange(12)
    tris = np.column_stack([np.zeros(12, dtype=np.int64), k + 1, (k + 1) % 12 + 1])
    meshes = [_build_mesh(nodes, tris, 0, "dodecagon")]
    for _ in range(max_level):
        meshes.append(refine(meshes[-1]))
    return meshes


def refine(mesh):
    """Split each triangle into 4 congruent children via edge midpoints.

    Parent nodes keep their indices as a prefix; the new midpoint nodes follow
    in lexicographic order of their (sorted) parent edge pairs.
    """
    tris = mesh.triangles.astype(np.int64)
    raw = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    raw_sorted = np.sort(raw, axis=1)
    edges, inverse = np.unique(raw_sorted, axis=0, return_inverse=True)
    n_old = mesh.n_nodes
    midpoints = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    nodes = np.vstack([mesh.nodes, midpoints])

    nt = tris.shape[0]
    m_ab = n_old + inverse[0:nt]
    m_bc = n_old + inverse[nt:2 * nt]
    m_ca = n_old + inverse[2 * nt:3 * nt]
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    children = np.empty((4 * nt, 3), dtype=np.int64)
    children[0::4] = np.column_stack([a, m_ab, m_ca])
    children[1::4] = np.column_stack([m_ab, b, m_bc])
    children[2::4] = np.column_stack([m_ca, m_bc, c])
    children[3::4] = np.column_stack([m_ab, m_bc, m_ca])
    return _build_mesh(nodes, children, mesh.level + 1, mesh.family,
                       parent=mesh, midpoint_edges=edges)


# -- point location ------------------------------------------------------------

def grid_interpolation(grid, points):
    """Vectorized P1 interpolation data on a uniform grid.

    Returns (tri_idx, vertex_idx (m,3), bary (m,3)) for points inside [0,1]^2
    (tolerance 1e-12). Lookup is pure index arithmetic. On the cell diagonal
    the lower triangle (smaller index) wins.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if np.any(pts < -_TOL) or np.any(pts > 1.0 + _TOL):
        bad = pts[np.any((pts < -_TOL) | (pts > 1.0 + _TOL), axis=1)][0]
        raise LocationError(f"point {tuple(bad)} outside the unit square")
    n = grid.n_per_axis
    scaled = np.clip(pts, 0.0, 1.0) / grid.spacing
    cell = np.minimum(scaled.astype(np.int64), n - 2)
    xi = scaled[:, 0] - cell[:, 0]
    eta = scaled[:, 1] - cell[:, 1]
    lower = xi + eta <= 1.0
    ci, cj = cell[:, 0], cell[:, 1]
    v00 = ci * n + cj
    tri_idx = 2 * (ci * (n - 1) + cj) + (~lower)
    vertex_idx = np.empty((pts.shape[0], 3), dtype=np.int64)
    bary = np.empty((pts.shape[0], 3))
    # lower (v00, v10, v01); upper (v10, v11, v01)
    vertex_idx[lower, 0] = v00[lower]
    vertex_idx[lower, 1] = v00[lower] + n
    vertex_idx[lower, 2] = v00[lower] + 1
    bary[lower, 0] = 1.0 - xi[lower] - eta[lower]
    bary[lower, 1] = xi[lower]
    bary[lower, 2] = eta[lower]
    up = ~lower
    vertex_idx[up, 0] = v00[up] + n
    vertex_idx[up, 1] = v00[up] + n + 1
    vertex_idx[up, 2] = v00[up] + 1
    bary[up, 0] = 1.0 - eta[up]
    bary[up, 1] = xi[up] + eta[up] - 1.0
    bary[up, 2] = 1.0 - xi[up]
    return tri_idx, vertex_idx, bary


_locator_cache = weakref.WeakKeyDictionary()


class PointLocator:
    """Background-bin point locator for an arbitrary mesh."""

    def __init__(self, mesh, bins_per_axis=None):
        self.mesh = mesh
        if bins_per_axis is None:
            bins_per_axis = max(1, int(np.sqrt(mesh.n_triangles / 2)))
        self.nb = bins_per_axis
        lo = mesh.nodes.min(axis=0)
        hi = mesh.nodes.max(axis=0)
        span = np.maximum(hi - lo, 1e-30)
        self.lo, self.span = lo, span
        tri_pts = mesh.nodes[mesh.triangles]
        tlo = ((tri_pts.min(axis=1) - lo) / span * self.nb - 1e-9).astype(np.int64)
        thi = ((tri_pts.max(axis=1) - lo) / span * self.nb + 1e-9).astype(np.int64)
        tlo = np.clip(tlo, 0, self.nb - 1)
        thi = np.clip(thi, 0, self.nb - 1)
        self.bins = [[] for _ in range(self.nb * self.nb)]
        for t in range(mesh.n_triangles):
            for bi in range(tlo[t, 0], thi[t, 0] + 1):
                for bj in range(tlo[t, 1], thi[t, 1] + 1):
                    self.bins[bi * self.nb + bj].append(t)
        self.bins = [np.array(sorted(b), dtype=np.int64) for b in self.bins]

    def _candidates(self, p):
        b = ((p - self.lo) / self.span * self.nb).astype(np.int64)
        b = np.clip(b, 0, self.nb - 1)
        return self.bins[b[0] * self.nb + b[1]]

    def locate(self, p):
        p = np.asarray(p, dtype=np.float64)
        for t in self._candidates(p):
            lam = barycentric(self.mesh, t, p)
            if np.all(lam >= -_TOL):
                return int(t), lam
        raise LocationError(f"point {tuple(p)} not inside the mesh")


def barycentric(mesh, tri_index, p):
    """Barycentric coordinates of p in triangle tri_index (may be negative outside)."""
    v = mesh.nodes[mesh.triangles[tri_index]]
    m = np.column_stack([v[1] - v[0], v[2] - v[0]])
    lam12 = np.linalg.solve(m, np.asarray(p, dtype=np.float64) - v[0])
    return np.array([1.0 - lam12[0] - lam12[1], lam12[0], lam12[1]])


def locate(grid_or_mesh, p):
    """Containing triangle and barycentric coordinates of p.

    O(1) index arithmetic on a UniformGrid; binned search on a Mesh. Ties on
    shared edges resolve to the first containing triangle in index order.
    """
    if isinstance(grid_or_mesh, UniformGrid):
        tri, _, bary = grid_interpolation(grid_or_mesh, np.asarray(p)[None, :])
        return int(tri[0]), bary[0]
    locator = _locator_cache.get(grid_or_mesh)
    if locator is None:
        locator = PointLocator(grid_or_mesh)
        _locator_cache[grid_or_mesh] = locator
    return locator.locate(p)


# -- sampling and I/O ----------------------------------------------------------

def sample_points_in_mesh(mesh, n, rng):
    """Uniform points in the meshed domain: area-weighted triangle, uniform inside.

    Returns (points (n,2), tri_idx (n,), bary (n,3)).
    """
    areas = triangle_areas(mesh)
    tri_idx = rng.choice(mesh.n_triangles, size=n, p=areas / areas.sum())
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    bary = np.column_stack([1.0 - u - v, u, v])
    pts = np.einsum("ik,ikj->ij", bary, mesh.nodes[mesh.triangles[tri_idx]])
    return pts, tri_idx, bary


def dump_mesh(mesh, path):
    """Plain-text dump: `nodes N triangles T`, node lines `x y flag`, triangle lines `i j k`."""
    flags = np.zeros(mesh.n_nodes, dtype=int)
    flags[mesh.boundary_nodes] = 1
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}\n")
        for (x, y), fl in zip(mesh.nodes, flags):
            fh.write(f"{x:.17g} {y:.17g} {fl}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
