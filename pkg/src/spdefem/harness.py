"""Experiment configuration, Monte Carlo convergence studies and CSV reports.

A study runs M coupled samples: per sample one noise path is drawn on the
finest square grid (the level the coupling policy assigns to the reference)
and every resolution consumes exact dyadic subsamples of it, so differences
between levels isolate the spatial and noise-interpolation errors. Errors are
measured at the final time on the reference mesh after exact prolongation.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from types import SimpleNamespace
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .fem import assemble_mass, prolong, scaled_laplacian_plus_identity
from .geometry import dodecagon_hierarchy, unit_square_grid
from .kernels import KernelSpec, predict_rates
from .noise import NoiseStream, build_spectrum, subsample
from .stepper import AssembledSpde, SpdeProblem, h_of_level, h_prime_of_level

COUPLINGS = ("h_prime_equals_h", "h_prime_sqrt_h", "fixed_level")

DEFAULT_SEED = 20230817


class NamedFunction:
    """Callable with a stable name for config echoes and CSV metadata."""

    def __init__(self, name, fn):
        self.name = name
        self.fn = fn

    def __call__(self, *args):
        return self.fn(*args)

    def __repr__(self):
        return f"<fn {self.name}>"


def _saturating(u, x):
    return u / (np.abs(u) + 1.0)


def _log_spike(pts):
    # H^1 but not H^(1+eps): 3 (-log |x - c|^2)^(1/3) around c = (0.5, 0.5).
    # Quadrature points within 1e-10 of the singular center are shifted
    # radially by 1e-8 before evaluation (the projection itself is well
    # defined; the shift changes the load by O(1e-8 log)).
    pts = np.array(pts, dtype=np.float64, copy=True)
    d = pts - np.array([0.5, 0.5])
    r = np.hypot(d[..., 0], d[..., 1])
    close = r < 1e-10
    if np.any(close):
        direction = np.where(r[close, None] > 0.0,
                             d[close] / np.maximum(r[close, None], 1e-300),
                             np.array([1.0, 0.0]))
        pts[close] = np.array([0.5, 0.5]) + 1e-8 * direction
        d = pts - np.array([0.5, 0.5])
    r2 = d[..., 0] ** 2 + d[..., 1] ** 2
    return 3.0 * (-np.log(r2)) ** (1.0 / 3.0)


FUNCTIONS = {
    "zero": NamedFunction("zero", lambda u, x: np.zeros(np.shape(u))),
    "one": NamedFunction("one", lambda u, x: np.ones(np.shape(u))),
    "saturating": NamedFunction("saturating", _saturating),
    "0.1+saturating": NamedFunction("0.1+saturating", lambda u, x: 0.1 + _saturating(u, x)),
    "0.1": NamedFunction("0.1", lambda u, x: np.full(np.shape(u), 0.1)),
}

X0_FUNCTIONS = {
    "zero": NamedFunction("zero", lambda pts: np.zeros(pts.shape[:-1])),
    "log_spike": NamedFunction("log_spike", _log_spike),
}


@dataclass(eq=False)
class ExperimentConfig:
    """Fully specified convergence experiment."""

    name: str
    kernel: Optional[KernelSpec]
    bc: str
    f: Optional[NamedFunction]
    g: Optional[NamedFunction]
    b_field: Optional[object]
    x0: NamedFunction
    T: float
    dt: float
    levels: tuple
    ref_level: int
    coupling: str = "h_prime_equals_h"
    fixed_s_level: Optional[int] = None
    M: int = 16
    master_seed: int = DEFAULT_SEED
    operator_scale: float = 1e-2
    embedding_mode: str = "strict"
    max_padding: int = 4
    x0_cap: float = math.inf
    cg_tol: float = 1e-10

    def __post_init__(self):
        self.levels = tuple(int(l) for l in self.levels)
        if not self.levels:
            raise ConfigurationError("levels must be non-empty")
        if self.ref_level <= max(self.levels) + 1:
            raise ConfigurationError("ref_level must exceed max(levels) + 1")
        if self.M < 2:
            raise ConfigurationError("need at least M = 2 samples")
        if self.coupling not in COUPLINGS:
            raise ConfigurationError(f"unknown coupling {self.coupling!r}")
        if self.coupling == "fixed_level" and self.fixed_s_level is None:
            raise ConfigurationError("fixed_level coupling needs fixed_s_level")

    def s_level_of(self, d_level):
        """Square-grid level assigned to a dodecagon level by the coupling policy."""
        l_eff = d_level + 1          # square level whose spacing equals h(d_level)
        if self.coupling == "h_prime_equals_h":
            return l_eff
        if self.coupling == "h_prime_sqrt_h":
            return math.ceil(l_eff / 2)
        return int(self.fixed_s_level)

    def problem_for(self, d_level):
        return SpdeProblem(
            bc=self.bc,
            coeffs=scaled_laplacian_plus_identity(self.operator_scale),
            f=self.f, g=self.g, b_field=self.b_field, x0=self.x0,
            kernel=self.kernel, T=self.T, dt=self.dt,
            d_level=d_level, s_level=self.s_level_of(d_level),
        )


@dataclass(eq=False)
class ErrorReport:
    rows: list                      # (level, h, h_prime, rms_error, stderr), decreasing h
    fitted_rate: float
    predicted: Optional[object]
    config: dict
    wall_time: float


def fit_rate(pairs):
    """Least-squares slope of log(error) against log(h)."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ConfigurationError("need at least two (h, error) pairs")
    h = np.array([p[0] for p in pairs], dtype=np.float64)
    e = np.array([p[1] for p in pairs], dtype=np.float64)
    if np.any(h <= 0.0) or np.any(e <= 0.0):
        raise ConfigurationError("rate fitting needs positive mesh sizes and errors")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def run_convergence_study(config, workers=1):
    """Coupled Monte Carlo study of the strong error against a fine reference.

    Per sample, the reference trajectory and all coarse-level trajectories are
    advanced in lockstep from one noise path drawn at the reference's grid
    level; each level sees the exact dyadic subsample its coupling assigns.
    The error is the L2 distance at time T on the reference mesh.
    """
    t0 = time.perf_counter()
    levels = sorted(config.levels)
    meshes = dodecagon_hierarchy(config.ref_level)
    run_levels = levels + [config.ref_level]
    s_star = config.s_level_of(config.ref_level)
    for l in levels:
        if config.s_level_of(l) > s_star:
            raise ConfigurationError("coupling assigns a coarse level a finer grid "
                                     "than the reference")

    assembled = {}
    for l in run_levels:
        problem = config.problem_for(l)
        grid = unit_square_grid(problem.s_level) if config.g is not None else None
        assembled[l] = AssembledSpde(problem, mesh=meshes[l], grid=grid,
                                     cg_tol=config.cg_tol)

    noisy = config.g is not None
    spectrum = None
    if noisy:
        spectrum = build_spectrum(config.kernel, s_star,
                                  max_padding_doublings=config.max_padding,
                                  mode=config.embedding_mode)

    mass_ref = assemble_mass(meshes[config.ref_level])   # full nodal mass for errors
    n_steps = assembled[config.ref_level].problem.n_steps

    def one_sample(m):
        states = {l: assembled[l].initial_state() for l in run_levels}
        stream = NoiseStream(config.master_seed, m, spectrum, config.dt) if noisy else None
        for j in range(1, n_steps + 1):
            z = stream.increment_at(j - 1) if noisy else None
            for l in run_levels:
                incr = subsample(z, config.s_level_of(l)) if noisy else None
                states[l] = assembled[l].step(states[l], incr)
        ref_nodal = states[config.ref_level].field.nodal_values()
        errs = np.empty(len(levels))
        for i, l in enumerate(levels):
            diff = prolong(states[l].field, meshes[config.ref_level]).nodal_values() - ref_nodal
            errs[i] = np.sqrt(max(diff @ (mass_ref @ diff), 0.0))
        return errs

    per_sample = np.empty((config.M, len(levels)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for m, errs in enumerate(pool.map(one_sample, range(config.M))):
                per_sample[m] = errs
    else:
        for m in range(config.M):
            per_sample[m] = one_sample(m)

    mean_sq = per_sample ** 2
    rms = np.sqrt(mean_sq.mean(axis=0))
    if config.M > 1:
        se_sq = mean_sq.std(axis=0, ddof=1) / np.sqrt(config.M)
        stderr = np.where(rms > 0.0, se_sq / (2.0 * np.maximum(rms, 1e-300)), 0.0)
    else:
        stderr = np.zeros_like(rms)

    rows = [(l, h_of_level(l), h_prime_of_level(config.s_level_of(l)),
             float(rms[i]), float(stderr[i]))
            for i, l in enumerate(levels)]
    fitted = fit_rate([(row[1], row[3]) for row in rows])
    predicted = (predict_rates(config.kernel, config.bc, config.x0_cap)
                 if config.kernel is not None else None)
    echo = {
        "name": config.name, "bc": config.bc,
        "kernel": repr(config.kernel),
        "f": getattr(config.f, "name", None), "g": getattr(config.g, "name", None),
        "b": repr(config.b_field), "x0": getattr(config.x0, "name", repr(config.x0)),
        "T": config.T, "dt": config.dt, "levels": list(levels),
        "ref_level": config.ref_level, "coupling": config.coupling,
        "M": config.M, "seed": config.master_seed,
        "embedding_mode": config.embedding_mode,
    }
    if spectrum is not None:
        echo["embed_size"] = spectrum.embed_size
        echo["clip_count"] = spectrum.clip_count
        echo["clipped_mass_fraction"] = spectrum.clipped_mass_fraction
    return ErrorReport(rows, fitted, predicted, echo, time.perf_counter() - t0)


# -- presets ------------------------------------------------------------------

PROFILES = {
    # levels chosen so the coarse h ladder spans 2^-1 .. 2^-5 at paper scale
    "paper": dict(dt=1e-3, T=1.0, levels=(0, 1, 2, 3, 4), ref_level=6, M=80),
    "desk": dict(dt=2e-3, T=1.0, levels=(1, 2, 3, 4), ref_level=6, M=16),
}

PRESET_NAMES = ("matern_nu_scan", "exp_vs_factorizable", "rough_x0_coarse_noise")


def preset(name, profile="desk", master_seed=DEFAULT_SEED):
    """Fully populated experiment configs for the three reference studies."""
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}; use one of {tuple(PROFILES)}")
    scale = PROFILES[profile]
    base = dict(T=scale["T"], dt=scale["dt"], levels=scale["levels"],
                ref_level=scale["ref_level"], M=scale["M"], master_seed=master_seed)

    if name == "matern_nu_scan":
        configs = []
        for nu in (0.01, 0.5, 1.0):
            configs.append(ExperimentConfig(
                name=f"matern_nu_{nu:g}",
                kernel=KernelSpec("matern", sigma2=10.0, rho=0.25, nu=nu),
                bc="neumann",
                f=FUNCTIONS["0.1+saturating"], g=FUNCTIONS["saturating"],
                b_field=None, x0=X0_FUNCTIONS["zero"],
                coupling="h_prime_equals_h", **base))
        return configs

    if name == "exp_vs_factorizable":
        kernels = [("exponential", KernelSpec("matern", sigma2=10.0, rho=0.25, nu=0.5)),
                   ("factorizable_exponential",
                    KernelSpec("factorizable_exponential", sigma2=10.0, rho=0.25))]
        return [ExperimentConfig(
            name=label,
            kernel=k, bc="dirichlet",
            f=FUNCTIONS["0.1"], g=FUNCTIONS["one"],
            b_field=np.array([0.1, 0.1]), x0=X0_FUNCTIONS["zero"],
            coupling="h_prime_equals_h", **base) for label, k in kernels]

    if name == "rough_x0_coarse_noise":
        kernel = KernelSpec("poly_wendland2", sigma2=10.0)
        return [ExperimentConfig(
            name=f"rough_x0_{coupling}",
            kernel=kernel, bc="neumann",
            f=FUNCTIONS["0.1"], g=FUNCTIONS["one"],
            b_field=None, x0=X0_FUNCTIONS["log_spike"], x0_cap=0.0,
            coupling=coupling, **base)
            for coupling in ("h_prime_equals_h", "h_prime_sqrt_h")]

    raise ConfigurationError(f"unknown preset {name!r}; use one of {PRESET_NAMES}")


# -- CSV ------------------------------------------------------------------------

def emit_csv(report, path):
    """Write the per-level table plus fitted/predicted-rate comment lines."""
    pred = report.predicted
    lines = ["level,h,h_prime,rms_error,stderr"]
    for level, h, hp, rms, se in report.rows:
        lines.append(f"{level},{h:.12e},{hp:.12e},{rms:.12e},{se:.12e}")
    fitted = report.fitted_rate
    lines.append(f"# fitted_rate={fitted:.12e}")
    r1p1 = 1.0 + pred.r1_sup if pred is not None else float("nan")
    r2 = pred.r2_sup if pred is not None else float("nan")
    lines.append(f"# predicted_r1_plus_1={r1p1:.12e}")
    lines.append(f"# predicted_r2={r2:.12e}")
    lines.append(f"# seed={report.config.get('seed')}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_csv(path):
    """Read an emit_csv file back (rows plus the comment metadata)."""
    rows = []
    meta = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "level,h,h_prime,rms_error,stderr":
            raise ConfigurationError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ConfigurationError(f"{path}: malformed row {line!r}")
            rows.append((int(parts[0]), *(float(x) for x in parts[1:])))
    return SimpleNamespace(
        rows=rows,
        fitted_rate=float(meta.get("fitted_rate", "nan")),
        predicted_r1_plus_1=float(meta.get("predicted_r1_plus_1", "nan")),
        predicted_r2=float(meta.get("predicted_r2", "nan")),
        seed=meta.get("seed"),
    )
