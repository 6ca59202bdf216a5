"""Integer and fractional Sobolev (semi)norms and interpolation-rate studies.

Integer orders are computed by degree-5 quadrature (exact per triangle for the
piecewise-polynomial integrands that arise); the fractional Slobodeckij
seminorm is estimated by Monte Carlo over point pairs, which handles the
integrable diagonal singularity |x-y|^-(d+pr) without singular quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .errors import ConfigurationError, NumericError
from .fem import P7_BARY, _geom, interpolate_nodal, quad7
from .geometry import dodecagon_mesh, sample_points_in_mesh, unit_square_grid


@dataclass(frozen=True)
class SeminormEstimate:
    r: float
    p: float
    value: float
    stderr: float
    n_samples: int


def _values_at_qp7(f, mesh):
    g = _geom(mesh)
    if callable(f):
        return np.asarray(f(g.qp7.reshape(-1, 2))).reshape(g.qp7.shape[:2])
    nodal = f.nodal_values()
    return np.einsum("qi,ti->tq", P7_BARY, nodal[g.tris])


def lp_norm(f, mesh, p):
    """(int |f|^p)^(1/p) over the meshed domain, degree-5 quadrature."""
    if not 1.0 <= p < np.inf:
        raise ConfigurationError("p must lie in [1, inf)")
    vals = _values_at_qp7(f, mesh)
    return quad7(mesh, np.abs(vals) ** p) ** (1.0 / p)


def w1p_seminorm(field, mesh, p):
    """First-order seminorm (sum over both partials of int |D^a u|^p)^(1/p); exact for P1."""
    g = _geom(mesh)
    nodal = field.nodal_values()
    grad = np.einsum("tk,tki->ti", nodal[g.tris], g.grads)
    total = float(np.sum(g.areas[:, None] * np.abs(grad) ** p))
    return total ** (1.0 / p)


def slobodeckij_seminorm_mc(f, mesh, r, p, n_pairs, seed):
    """Monte Carlo estimate of the order-r Slobodeckij seminorm of f.

    Pairs are drawn uniformly over the domain (area-weighted triangle pick,
    uniform inside); pairs closer than 1e-9 are redrawn. f is called on point
    arrays; objects with an ``eval_at(points, tri, bary)`` method (P1-aware
    evaluands) get the sampled triangle data instead of a point-location pass.
    The returned stderr is the delta-method error of value = estimate^(1/p).
    """
    if not 0.0 < r < 1.0:
        raise ConfigurationError("slobodeckij order r must lie in (0, 1)")
    if not 1.0 < p < np.inf:
        raise ConfigurationError("p must lie in (1, inf)")
    rng = np.random.default_rng(seed)
    area = float(_geom(mesh).areas.sum())

    def draw(n):
        pts, tri, bary = sample_points_in_mesh(mesh, n, rng)
        if hasattr(f, "eval_at"):
            vals = np.asarray(f.eval_at(pts, tri, bary), dtype=np.float64)
        else:
            vals = np.asarray(f(pts), dtype=np.float64)
        return pts, vals

    need = int(n_pairs)
    gvals = np.empty(need)
    filled = 0
    for _ in range(100):
        if filled >= need:
            break
        m = need - filled
        xs, fx = draw(m)
        ys, fy = draw(m)
        dist = np.hypot(xs[:, 0] - ys[:, 0], xs[:, 1] - ys[:, 1])
        ok = (dist >= 1e-9) & np.isfinite(fx) & np.isfinite(fy)
        vals = np.abs(fx[ok] - fy[ok]) ** p / dist[ok] ** (2.0 + p * r)
        gvals[filled:filled + vals.shape[0]] = vals
        filled += vals.shape[0]
    else:
        raise NumericError("could not draw enough finite, separated pairs in 100 rounds")

    mean = float(gvals.mean())
    est = area * area * mean
    if est <= 0.0:
        return SeminormEstimate(r, p, 0.0, 0.0, need)
    se_est = area * area * float(gvals.std(ddof=1)) / np.sqrt(need)
    value = est ** (1.0 / p)
    stderr = se_est * value / (p * est)
    return SeminormEstimate(r, p, value, stderr, need)


class P1InterpolationError:
    """Evaluand v - I_h v; uses sampled (triangle, barycentric) data directly."""

    def __init__(self, v, mesh):
        self.v = v
        self.mesh = mesh
        self.nodal = interpolate_nodal(v, mesh)

    def eval_at(self, pts, tri, bary):
        interp = np.einsum("ik,ik->i", self.nodal[self.mesh.triangles[tri]], bary)
        return np.asarray(self.v(pts)) - interp


def _error_norm(v, mesh, r, p, n_pairs, seed):
    g = _geom(mesh)
    nodal = interpolate_nodal(v, mesh)
    if r == 0.0:
        exact = np.asarray(v(g.qp7.reshape(-1, 2))).reshape(g.qp7.shape[:2])
        interp = np.einsum("qi,ti->tq", P7_BARY, nodal[g.tris])
        err = quad7(mesh, np.abs(exact - interp) ** p) ** (1.0 / p)
        return err, 0.0
    if r == 1.0:
        if not hasattr(v, "grad"):
            raise ConfigurationError("r = 1 needs the test function's gradient (v.grad)")
        dv = np.asarray(v.grad(g.qp7.reshape(-1, 2))).reshape(g.qp7.shape[:2] + (2,))
        gh = np.einsum("tk,tki->ti", nodal[g.tris], g.grads)
        diff = np.abs(dv - gh[:, None, :]) ** p
        err = quad7(mesh, diff.sum(axis=-1)) ** (1.0 / p)
        return err, 0.0
    est = slobodeckij_seminorm_mc(P1InterpolationError(v, mesh), mesh, r, p, n_pairs, seed)
    return est.value, est.stderr


def interpolation_rate_study(v, r, p, levels, mesh_family="square",
                             n_pairs=10 ** 6, seed=0):
    """Decay rate of the (r, p)-norm interpolation error over a mesh-level scan.

    Exact quadrature for r in {0, 1}, Monte Carlo for fractional r. The fitted
    slope uses the last three levels only (pre-asymptotic levels excluded).
    Returns rows (level, h, error, stderr) and the slope.
    """
    if mesh_family not in ("square", "dodecagon"):
        raise ConfigurationError("mesh_family must be 'square' or 'dodecagon'")
    if not 0.0 <= r <= 1.0:
        raise ConfigurationError("supported orders are r in [0, 1]")
    if len(levels) < 2:
        raise ConfigurationError("need at least two levels")
    rows = []
    for i, level in enumerate(levels):
        if mesh_family == "square":
            mesh = unit_square_grid(level).mesh
            h = 2.0 ** (-level) * np.sqrt(2.0)
        else:
            mesh = dodecagon_mesh(level)
            h = mesh.h_max
        err, stderr = _error_norm(v, mesh, r, p, n_pairs, seed + 7919 * i)
        rows.append((level, h, err, stderr))
    tail = rows[-3:] if len(rows) >= 3 else rows
    hs = np.array([row[1] for row in tail])
    es = np.array([row[2] for row in tail])
    if np.any(es <= 0.0):
        slope = np.inf   # interpolant reproduces v exactly
    else:
        slope = float(np.polyfit(np.log(hs), np.log(es), 1)[0])
    return SimpleNamespace(slope=slope, rows=rows, r=r, p=p, family=mesh_family)


def write_interp_csv(result, path):
    """CSV rows `level,h,error,stderr` with a `slope,<value>` footer."""
    with open(path, "w") as fh:
        fh.write("level,h,error,stderr\n")
        for level, h, err, stderr in result.rows:
            fh.write(f"{level},{h:.12e},{err:.12e},{stderr:.12e}\n")
        fh.write(f"slope,{result.slope:.12e}\n")


# Named test functions for the CLI and the rate studies.

class _SinSin:
    """sin(pi x) sin(pi y); smooth, vanishing normal data on the unit square."""

    def __call__(self, pts):
        return np.sin(np.pi * pts[..., 0]) * np.sin(np.pi * pts[..., 1])

    def grad(self, pts):
        sx, cx = np.sin(np.pi * pts[..., 0]), np.cos(np.pi * pts[..., 0])
        sy, cy = np.sin(np.pi * pts[..., 1]), np.cos(np.pi * pts[..., 1])
        return np.pi * np.stack([cx * sy, sx * cy], axis=-1)


class _Linear:
    def __call__(self, pts):
        return 0.25 + 0.5 * pts[..., 0] - 1.5 * pts[..., 1]

    def grad(self, pts):
        g = np.array([0.5, -1.5])
        return np.broadcast_to(g, pts.shape[:-1] + (2,))


class _RadialPow:
    """|x - x0|^0.8 around x0 = (0.4, 0.45): limited Sobolev smoothness."""

    exponent = 0.8
    center = np.array([0.4, 0.45])

    def __call__(self, pts):
        d = np.hypot(pts[..., 0] - self.center[0], pts[..., 1] - self.center[1])
        return d ** self.exponent


TEST_FUNCTIONS = {
    "sinsin": _SinSin(),
    "linear": _Linear(),
    "radial_pow": _RadialPow(),
}
