"""P1 finite element core on triangle meshes.

Assembly of mass/stiffness matrices for a(u,v) = sum_ij int a_ij D_i u D_j v
+ int c u v, Dirichlet handling by dof elimination, nodal interpolation
transfer from the square grid, L2 projection, semilinear/advection loads,
Jacobi-preconditioned CG, norms, nested-mesh prolongation, and the finite
double-sum evaluation of the Hilbert-Schmidt norm of the interpolated noise
multiplication operator.

Quadrature: the 3-edge-midpoint rule (degree-2 exact) everywhere in the
production path; a 7-point degree-5 rule for norms, oracles and the
Hilbert-Schmidt sum, where integrands are quartic in P1 factors.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import backend
from .errors import ConfigurationError, NumericError
from .geometry import Mesh, UniformGrid, grid_interpolation, signed_areas
from .noise import pair_covariance

# -- sparse SPD matrices ---------------------------------------------------------

class SparseSpd:
    """Symmetric positive-(semi)definite matrix in CSR arrays.

    Construction verifies symmetry to 1e-14 (relative) and a strictly positive
    diagonal; the Jacobi preconditioner is cached on first use.
    """

    def __init__(self, mat):
        mat = sp.csr_matrix(mat)
        mat.sum_duplicates()
        mat.sort_indices()
        self.n = mat.shape[0]
        self.indptr = mat.indptr.astype(np.int32, copy=False)
        self.indices = mat.indices.astype(np.int32, copy=False)
        self.data = np.ascontiguousarray(mat.data, dtype=np.float64)
        scale = max(abs(self.data).max(), 1e-300) if self.data.size else 1.0
        asym = abs(mat - mat.T)
        if asym.nnz and asym.max() > 1e-14 * scale:
            raise ConfigurationError("matrix is not symmetric within 1e-14 relative")
        diag = mat.diagonal()
        if self.n and diag.min() <= 0.0:
            raise ConfigurationError("SPD matrix must have a strictly positive diagonal")
        self._diag = diag
        self._inv_diag = None

    @property
    def inv_diag(self):
        if self._inv_diag is None:
            self._inv_diag = 1.0 / self._diag
        return self._inv_diag

    def diagonal(self):
        return self._diag.copy()

    def matvec(self, x):
        return backend.csr_matvec(self.indptr, self.indices, self.data, x)

    def __matmul__(self, x):
        return self.matvec(x)

    def scipy(self):
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))

    def toarray(self):
        return self.scipy().toarray()

    def combine(self, alpha, other, beta):
        """alpha * self + beta * other as a new SparseSpd."""
        return SparseSpd(alpha * self.scipy() + beta * other.scipy())


# -- dofs, fields, coefficients ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class DofMap:
    """Free-node bookkeeping: all nodes (Neumann) or interior nodes (Dirichlet)."""

    bc: str
    n_nodes: int
    free_nodes: np.ndarray     # dof -> node
    node_to_dof: np.ndarray    # node -> dof, -1 if constrained

    @property
    def n_free(self):
        return self.free_nodes.shape[0]

    def restrict(self, full):
        return np.asarray(full)[..., self.free_nodes]

    def extend(self, free):
        free = np.asarray(free)
        full = np.zeros(free.shape[:-1] + (self.n_nodes,))
        full[..., self.free_nodes] = free
        return full


def make_dofmap(mesh, bc):
    if bc not in ("dirichlet", "neumann"):
        raise ConfigurationError(f"bc must be 'dirichlet' or 'neumann', got {bc!r}")
    if bc == "neumann":
        free = np.arange(mesh.n_nodes, dtype=np.int64)
    else:
        mask = np.ones(mesh.n_nodes, dtype=bool)
        mask[mesh.boundary_nodes] = False
        free = np.nonzero(mask)[0]
    node_to_dof = np.full(mesh.n_nodes, -1, dtype=np.int64)
    node_to_dof[free] = np.arange(free.shape[0])
    return DofMap(bc, mesh.n_nodes, free, node_to_dof)


@dataclass(eq=False)
class FemField:
    """P1 function given by coefficients over the free dofs (0 on Dirichlet nodes)."""

    mesh: Mesh
    dofmap: DofMap
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.ascontiguousarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (self.dofmap.n_free,):
            raise ConfigurationError("coefficient vector length must equal the free dof count")

    def nodal_values(self):
        return self.dofmap.extend(self.coeffs)

    def copy(self):
        return FemField(self.mesh, self.dofmap, self.coeffs.copy())


@dataclass(frozen=True)
class EllipticCoefficients:
    """Diffusion matrix a (2x2, constant or callable of points) and reaction c >= 0."""

    a: object = 1.0
    c: object = 0.0

    def a_at(self, pts):
        if callable(self.a):
            return np.asarray(self.a(pts), dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        if a.ndim == 0:
            a = a * np.eye(2)
        return np.broadcast_to(a, pts.shape[:-1] + (2, 2))

    def c_at(self, pts):
        if callable(self.c):
            return np.asarray(self.c(pts), dtype=np.float64)
        return np.full(pts.shape[:-1], float(self.c))


def scaled_laplacian_plus_identity(scale):
    """Coefficients of scale * (-Laplace + I), the operator used in the experiments."""
    return EllipticCoefficients(a=scale, c=scale)


# -- quadrature -------------------------------------------------------------------

# 3-edge-midpoint rule, degree-2 exact; weights relative to the triangle area.
MIDPOINT_BARY = np.array([[0.5, 0.5, 0.0],
                          [0.0, 0.5, 0.5],
                          [0.5, 0.0, 0.5]])
MIDPOINT_W = np.full(3, 1.0 / 3.0)

# 7-point degree-5 rule (centroid + two orbits).
_g1 = (6.0 - np.sqrt(15.0)) / 21.0
_g2 = (6.0 + np.sqrt(15.0)) / 21.0
P7_BARY = np.array([
    [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    [1.0 - 2.0 * _g1, _g1, _g1],
    [_g1, 1.0 - 2.0 * _g1, _g1],
    [_g1, _g1, 1.0 - 2.0 * _g1],
    [1.0 - 2.0 * _g2, _g2, _g2],
    [_g2, 1.0 - 2.0 * _g2, _g2],
    [_g2, _g2, 1.0 - 2.0 * _g2],
])
P7_W = np.array([9.0 / 40.0,
                 (155.0 - np.sqrt(15.0)) / 1200.0, (155.0 - np.sqrt(15.0)) / 1200.0,
                 (155.0 - np.sqrt(15.0)) / 1200.0,
                 (155.0 + np.sqrt(15.0)) / 1200.0, (155.0 + np.sqrt(15.0)) / 1200.0,
                 (155.0 + np.sqrt(15.0)) / 1200.0])


_geom_cache = weakref.WeakKeyDictionary()


def _geom(mesh):
    """Per-mesh geometry cache: areas, int32 triangles, midpoints, P1 gradients."""
    g = _geom_cache.get(mesh)
    if g is None:
        tris = mesh.triangles.astype(np.int32)
        pts = mesh.nodes[tris]                      # (t, 3, 2)
        areas = signed_areas(mesh.nodes, mesh.triangles)
        mids = 0.5 * (pts + np.roll(pts, -1, axis=1))   # m01, m12, m20
        # grad phi_i = perp(p_{i+2} - p_{i+1}) / (2A), perp(v) = (-vy, vx)
        edge = np.roll(pts, -2, axis=1) - np.roll(pts, -1, axis=1)
        grads = np.stack([-edge[..., 1], edge[..., 0]], axis=-1) / (2.0 * areas)[:, None, None]
        qp7 = np.einsum("qi,tij->tqj", P7_BARY, pts)
        g = SimpleNamespace(tris=tris, pts=pts, areas=areas, mids=mids,
                            grads=grads, qp7=qp7)
        _geom_cache[mesh] = g
    return g


def quad7(mesh, values_at_qp):
    """Integrate per-triangle quadrature values (t, 7) with the degree-5 rule."""
    g = _geom(mesh)
    return float(np.einsum("t,q,tq->", g.areas, P7_W, values_at_qp))


# -- assembly ----------------------------------------------------------------------

def _restrict_matrix(rows, cols, vals, dofmap):
    if dofmap is None:
        n = int(max(rows.max(), cols.max())) + 1
        return SparseSpd(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr())
    r = dofmap.node_to_dof[rows]
    c = dofmap.node_to_dof[cols]
    keep = (r >= 0) & (c >= 0)
    n = dofmap.n_free
    return SparseSpd(sp.coo_matrix((vals[keep], (r[keep], c[keep])), shape=(n, n)).tocsr())


LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def assemble_mass(mesh, dofmap=None):
    """M[k,l] = int phi_k phi_l, exact per triangle."""
    g = _geom(mesh)
    local = g.areas[:, None, None] * LOCAL_MASS
    rows = np.repeat(g.tris, 3, axis=1).ravel()
    cols = np.tile(g.tris, (1, 3)).ravel()
    return _restrict_matrix(rows, cols, local.ravel(), dofmap)


def assemble_stiffness(mesh, dofmap, coeffs):
    """S[k,l] = sum_ij int a_ij D_i phi_k D_j phi_l + int c phi_k phi_l.

    Gradients are constant per triangle; variable coefficients are integrated
    with the edge-midpoint rule (exact for the experiments' constants).
    Ellipticity of a is checked at the quadrature points.
    """
    g = _geom(mesh)
    a_q = coeffs.a_at(g.mids)          # (t, 3, 2, 2)
    c_q = coeffs.c_at(g.mids)          # (t, 3)
    sym_defect = np.abs(a_q - np.swapaxes(a_q, -1, -2)).max()
    if sym_defect > 1e-12 * max(np.abs(a_q).max(), 1e-300):
        raise ConfigurationError("diffusion matrix a must be symmetric")
    tr = a_q[..., 0, 0] + a_q[..., 1, 1]
    det = a_q[..., 0, 0] * a_q[..., 1, 1] - a_q[..., 0, 1] * a_q[..., 1, 0]
    eig_min = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0)))
    if eig_min.min() <= 0.0:
        raise ConfigurationError(
            f"ellipticity violated: min eigenvalue {eig_min.min():.3e} at a quadrature point")
    if c_q.min() < 0.0:
        raise ConfigurationError("reaction coefficient c must be nonnegative")

    a_mean = a_q.mean(axis=1)          # midpoint rule on the constant-gradient term
    flux = np.einsum("tkj,tji->tki", g.grads, a_mean)
    local = np.einsum("t,tki,tli->tkl", g.areas, flux, g.grads)
    phi = MIDPOINT_BARY.T              # (3 vertices, 3 midpoints)
    local += np.einsum("t,tq,kq,lq->tkl", g.areas / 3.0, c_q, phi, phi)
    rows = np.repeat(g.tris, 3, axis=1).ravel()
    cols = np.tile(g.tris, (1, 3)).ravel()
    return _restrict_matrix(rows, cols, local.ravel(), dofmap)


# -- noise transfer -----------------------------------------------------------------

class GridToMeshTransfer:
    """Precomputed I_h R I_h' map: square-grid nodal values -> mesh nodal values."""

    def __init__(self, grid, mesh):
        self.grid = grid
        self.mesh = mesh
        _, vidx, w = grid_interpolation(grid, mesh.nodes)
        self.vertex_idx = vidx
        self.weights = w

    def __call__(self, square_values):
        flat = np.asarray(square_values).ravel()
        return (flat[self.vertex_idx] * self.weights).sum(axis=1)


_transfer_cache = weakref.WeakKeyDictionary()


def transfer_noise(square_values, grid, mesh):
    """Evaluate the grid P1 interpolant of square_values at all mesh nodes."""
    per_grid = _transfer_cache.get(grid)
    if per_grid is None:
        per_grid = _transfer_cache[grid] = weakref.WeakKeyDictionary()
    xfer = per_grid.get(mesh)
    if xfer is None:
        xfer = per_grid[mesh] = GridToMeshTransfer(grid, mesh)
    return xfer(square_values)


# -- loads --------------------------------------------------------------------------

def _scatter_midpoint_load(mesh, vals):
    """Nodal vector b_k = sum_T |T|/3 sum_m vals[T,m] phi_k(x_m) from midpoint values."""
    g = _geom(mesh)
    scale = g.areas / 3.0
    contrib = np.empty_like(vals)
    contrib[:, 0] = 0.5 * (vals[:, 0] + vals[:, 2]) * scale
    contrib[:, 1] = 0.5 * (vals[:, 0] + vals[:, 1]) * scale
    contrib[:, 2] = 0.5 * (vals[:, 1] + vals[:, 2]) * scale
    out = np.zeros(mesh.n_nodes)
    backend.scatter_add3(g.tris, contrib, out)
    return out


def _midpoint_state(mesh, nodal):
    v = nodal[_geom(mesh).tris]
    return 0.5 * (v + np.roll(v, -1, axis=1))


def load_semilinear(state, fn, weight=None):
    """b_k = int fn(u_h(x), x) * w_h(x) * phi_k(x) dx over the state's mesh.

    weight is a full nodal array interpolated as a P1 function (the transferred
    noise increment); omit it for the reaction term. Returns free-dof values.
    """
    mesh, dofmap = state.mesh, state.dofmap
    g = _geom(mesh)
    u_mid = _midpoint_state(mesh, state.nodal_values())
    vals = np.asarray(fn(u_mid, g.mids), dtype=np.float64)
    vals = np.broadcast_to(vals, u_mid.shape).copy()
    if weight is not None:
        vals *= _midpoint_state(mesh, np.asarray(weight, dtype=np.float64))
    return dofmap.restrict(_scatter_midpoint_load(mesh, vals))


def load_advection(state, b_field):
    """b_k = int (b . grad u_h) phi_k dx; exact for constant b."""
    mesh, dofmap = state.mesh, state.dofmap
    g = _geom(mesh)
    nodal = state.nodal_values()
    grad_u = np.einsum("tk,tki->ti", nodal[g.tris], g.grads)      # (t, 2)
    if callable(b_field):
        b_mid = np.asarray(b_field(g.mids), dtype=np.float64)     # (t, 3, 2)
        vals = np.einsum("tqi,ti->tq", b_mid, grad_u)
    else:
        b = np.asarray(b_field, dtype=np.float64)
        vals = np.broadcast_to((grad_u @ b)[:, None], (mesh.n_triangles, 3)).copy()
    return dofmap.restrict(_scatter_midpoint_load(mesh, vals))


def load_pointwise(f, mesh, dofmap):
    """b_k = int f(x) phi_k dx with the edge-midpoint rule; f may be a constant."""
    g = _geom(mesh)
    if callable(f):
        vals = np.asarray(f(g.mids), dtype=np.float64)
        vals = np.broadcast_to(vals, (mesh.n_triangles, 3)).copy()
    else:
        vals = np.full((mesh.n_triangles, 3), float(f))
    return dofmap.restrict(_scatter_midpoint_load(mesh, vals))


def l2_project(f, mesh, dofmap, mass):
    """L2-orthogonal projection of f onto the P1 space (free dofs)."""
    rhs = load_pointwise(f, mesh, dofmap)
    coeffs = solve_spd(mass, rhs)
    return FemField(mesh, dofmap, coeffs)


# -- solver and norms ----------------------------------------------------------------

def solve_spd(A, rhs, tol=1e-10, x0=None):
    """Jacobi-preconditioned CG to relative residual <= tol; deterministic."""
    x = np.zeros(A.n) if x0 is None else np.array(x0, dtype=np.float64)
    iters, relres = backend.pcg_jacobi(A.indptr, A.indices, A.data,
                                       np.ascontiguousarray(rhs, dtype=np.float64),
                                       x, A.inv_diag, tol, 10 * max(A.n, 1))
    if iters < 0:
        raise NumericError(f"CG stalled at relative residual {relres:.3e} (tol {tol:.1e})")
    return x


def l2_norm(field_or_vec, mass):
    """sqrt(v' M v); accepts a FemField (on M's dofmap) or a raw coefficient vector."""
    v = field_or_vec.coeffs if isinstance(field_or_vec, FemField) else np.asarray(field_or_vec)
    return float(np.sqrt(max(v @ (mass @ v), 0.0)))


def interpolate_nodal(f, mesh):
    """Nodal values of a pointwise function (the P1 interpolant's coefficients)."""
    if callable(f):
        return np.asarray(f(mesh.nodes), dtype=np.float64)
    return np.full(mesh.n_nodes, float(f))


def eval_p1(mesh, nodal, tri_idx, bary):
    """Evaluate the P1 function with given nodal values at (triangle, barycentric) points."""
    return np.einsum("ik,ik->i", nodal[mesh.triangles[tri_idx]], bary)


# -- prolongation ---------------------------------------------------------------------

def _same_mesh(a, b):
    if a is b:
        return True
    return (a.family == b.family and a.family != "custom"
            and a.level == b.level and a.n_nodes == b.n_nodes)


def prolong(field, target_mesh):
    """Exact embedding of a coarse P1 field into a nested refinement.

    Walks the refinement lineage one level at a time, filling each midpoint
    node with the average of its parent edge's endpoints.
    """
    chain = []
    m = target_mesh
    while m is not None and not _same_mesh(m, field.mesh):
        chain.append(m)
        m = m.parent
    if m is None:
        raise ConfigurationError("target mesh is not a nested refinement of the field's mesh")
    vals = field.nodal_values()
    for mesh_l in reversed(chain):
        e = mesh_l.midpoint_edges
        vals = np.concatenate([vals, 0.5 * (vals[e[:, 0]] + vals[e[:, 1]])])
    dofmap = make_dofmap(target_mesh, field.dofmap.bc)
    return FemField(target_mesh, dofmap, dofmap.restrict(vals))


# -- Hilbert-Schmidt norm of B I_h R I_h' ---------------------------------------------

def hs_norm_interpolated(kernel, d_mesh, s_grid, b_field):
    """Hilbert-Schmidt norm of v -> b * (I_h R I_h' v) from the noise RKHS to L2.

    Evaluated by the finite double sum over grid and mesh nodes,
    sum_{m,n} int b^2 (I_h R I_h' q(., x'_m)) phi_n dx * phi'_m(x_n),
    with degree-5 quadrature (exact: the integrand is quartic in P1 factors).
    Intended for small meshes (levels <= 3).
    """
    if d_mesh.level > 3 or s_grid.level > 3:
        raise ConfigurationError("hs_norm_interpolated is restricted to levels <= 3")
    xfer = GridToMeshTransfer(s_grid, d_mesh)
    n_d, n_s = d_mesh.n_nodes, s_grid.mesh.n_nodes
    tmat = np.zeros((n_d, n_s))
    tmat[np.arange(n_d)[:, None], xfer.vertex_idx] = xfer.weights
    q_nodes = pair_covariance(kernel, s_grid.mesh.nodes, s_grid.mesh.nodes)
    w_nodal = tmat @ q_nodes                      # (n_d, n_s): I_h R I_h' q(., x'_m)
    g = _geom(d_mesh)
    b_full = b_field.nodal_values()
    b2_qp = np.einsum("qi,ti->tq", P7_BARY, b_full[g.tris]) ** 2     # (t, 7)
    w_qp = np.einsum("qi,tim->tqm", P7_BARY, w_nodal[g.tris])        # (t, 7, n_s)
    c_tim = np.einsum("t,q,tq,qi,tqm->tim", g.areas, P7_W, b2_qp, P7_BARY, w_qp)
    total = float(np.einsum("tim,tim->", c_tim, tmat[g.tris]))
    return float(np.sqrt(max(total, 0.0)))


# -- dumps ----------------------------------------------------------------------------

def dump_field(field, path):
    """Plain-text nodal dump with a header naming the mesh level and bc."""
    vals = field.nodal_values()
    with open(path, "w") as fh:
        fh.write(f"# field mesh_level={field.mesh.level} bc={field.dofmap.bc} "
                 f"nodes={field.mesh.n_nodes}\n")
        for k, v in enumerate(vals):
            fh.write(f"{k} {v:.17g}\n")


def dump_matrix(A, path):
    """Coordinate-triplet text dump (debug)."""
    coo = A.scipy().tocoo()
    with open(path, "w") as fh:
        fh.write(f"# spd n={A.n} nnz={coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
