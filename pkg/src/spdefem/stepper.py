"""Semi-implicit Euler marching for the semilinear SPDE.

Each step solves (M + dt S) X^j = M X^{j-1} + dt (F-loads at X^{j-1})
+ (noise load at X^{j-1}), so the elliptic part is implicit while the
nonlinearities and the interpolated noise increment enter explicitly at the
previous level. The noise is read exclusively through the grid-to-mesh
transfer, which is what makes coarse-noise coupling exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, NumericError
from .fem import (
    EllipticCoefficients,
    FemField,
    GridToMeshTransfer,
    assemble_mass,
    assemble_stiffness,
    l2_norm,
    l2_project,
    load_advection,
    load_semilinear,
    make_dofmap,
    solve_spd,
)
from .geometry import dodecagon_mesh, unit_square_grid


def h_of_level(d_level):
    """Maximal mesh size of the dodecagon triangulation at a level."""
    return 0.5 * 2.0 ** (-d_level)


def h_prime_of_level(s_level):
    """Grid spacing of the unit-square triangulation at a level."""
    return 2.0 ** (-s_level)


@dataclass(eq=False)
class SpdeProblem:
    """Data of one initial-boundary value problem and its discretization sizes.

    f and g are vectorized scalar functions of (u, x); b_field is a constant
    advection vector or a callable of points; x0 is a pointwise function of
    points or a constant. g = None switches the noise off entirely.
    """

    bc: str
    coeffs: EllipticCoefficients
    f: Optional[object]
    g: Optional[object]
    b_field: Optional[object]
    x0: object
    kernel: Optional[object]
    T: float
    dt: float
    d_level: int
    s_level: int

    def __post_init__(self):
        if self.bc not in ("dirichlet", "neumann"):
            raise ConfigurationError(f"bc must be 'dirichlet' or 'neumann', got {self.bc!r}")
        if not (0.0 < self.dt <= 1.0):
            raise ConfigurationError("dt must lie in (0, 1]")
        if self.T <= 0.0:
            raise ConfigurationError("T must be positive")
        n = round(self.T / self.dt)
        if n < 0 or abs(self.T - n * self.dt) > 1e-9 * max(self.T, 1.0):
            raise ConfigurationError(f"T = {self.T} is not an integer multiple of dt = {self.dt}")
        self.n_steps = int(n)
        if self.bc == "neumann":
            probe = np.array([[0.4, 0.4], [0.6, 0.6]])
            if self.coeffs.c_at(probe).min() <= 0.0:
                raise ConfigurationError("Neumann problems require c >= c0 > 0")
        # Theorem-level coupling policy h <= C h': record the constant.
        self.h = h_of_level(self.d_level)
        self.h_prime = h_prime_of_level(self.s_level)
        self.coupling_constant = self.h / self.h_prime


@dataclass(eq=False)
class StepperState:
    j: int
    t: float
    field: FemField

    @property
    def coeffs(self):
        return self.field.coeffs


class AssembledSpde:
    """One problem assembled on its meshes; shareable read-only across samples."""

    def __init__(self, problem, mesh=None, grid=None, cg_tol=1e-10):
        self.problem = problem
        self.mesh = mesh if mesh is not None else dodecagon_mesh(problem.d_level)
        if self.mesh.level != problem.d_level:
            raise ConfigurationError("mesh level does not match the problem's d_level")
        self.dofmap = make_dofmap(self.mesh, problem.bc)
        self.mass = assemble_mass(self.mesh, self.dofmap)
        self.stiffness = assemble_stiffness(self.mesh, self.dofmap, problem.coeffs)
        self.system = self.mass.combine(1.0, self.stiffness, problem.dt)
        self.cg_tol = cg_tol
        if problem.g is not None:
            self.grid = grid if grid is not None else unit_square_grid(problem.s_level)
            if self.grid.level != problem.s_level:
                raise ConfigurationError("grid level does not match the problem's s_level")
            self.transfer = GridToMeshTransfer(self.grid, self.mesh)
        else:
            self.grid = None
            self.transfer = None
        self._x0_field = l2_project(problem.x0, self.mesh, self.dofmap, self.mass)

    def initial_state(self):
        """X^0 = L2 projection of the initial value; j = 0."""
        return StepperState(0, 0.0, self._x0_field.copy())

    def step(self, state, square_increment=None):
        """Advance one time step; square_increment is nodal noise on the s-grid."""
        p = self.problem
        rhs = self.mass @ state.coeffs
        if p.f is not None:
            rhs = rhs + p.dt * load_semilinear(state.field, p.f)
        if p.b_field is not None:
            rhs = rhs + p.dt * load_advection(state.field, p.b_field)
        if p.g is not None and square_increment is not None:
            w_full = self.transfer(square_increment)
            rhs = rhs + load_semilinear(state.field, p.g, weight=w_full)
        try:
            x_new = solve_spd(self.system, rhs, tol=self.cg_tol, x0=state.coeffs)
        except NumericError as exc:
            raise NumericError(f"step {state.j + 1}: {exc}") from exc
        if not np.all(np.isfinite(x_new)):
            raise NumericError(f"step {state.j + 1}: non-finite state")
        j = state.j + 1
        return StepperState(j, j * p.dt, FemField(self.mesh, self.dofmap, x_new))

    def run(self, stream=None, record_at=(), track_max=False):
        """March to T pulling one increment per step; deterministic given the stream.

        Returns (final_state, snapshots dict, max_l2 or None). record_at is a
        set of step indices to snapshot (0 and n_steps are valid).
        """
        p = self.problem
        if p.g is not None:
            if stream is None:
                raise ConfigurationError("problem has multiplicative noise but no stream")
            if stream.grid_level != p.s_level:
                raise ConfigurationError("stream grid level does not match s_level")
            if abs(stream.dt - p.dt) > 0:
                raise ConfigurationError("stream dt does not match the problem dt")
        record_at = set(record_at)
        state = self.initial_state()
        snapshots = {}
        if 0 in record_at:
            snapshots[0] = state.field.copy()
        max_l2 = l2_norm(state.field, self.mass) if track_max else None
        for j in range(1, p.n_steps + 1):
            incr = stream.increment_at(j - 1) if p.g is not None else None
            state = self.step(state, incr)
            if j in record_at:
                snapshots[j] = state.field.copy()
            if track_max:
                max_l2 = max(max_l2, l2_norm(state.field, self.mass))
        return state, snapshots, max_l2


def run(problem, stream=None, record_at=(), track_max=False):
    """Assemble and march a problem in one call."""
    return AssembledSpde(problem).run(stream, record_at, track_max)
