"""Acceptance suite: one test per criterion, printed as PASS/FAIL lines.

The convergence studies (criteria 3-5) are the expensive part; each preset
config runs once per session and is shared across assertions. Run with
``pytest tests/test_acceptance.py -v -s`` to see the per-criterion lines.
"""

import hashlib

import numpy as np
import pytest

import spdefem as s
from spdefem.fem import (FemField, P7_BARY, assemble_mass, hs_norm_interpolated,
                         l2_norm, make_dofmap, quad7, _geom,
                         scaled_laplacian_plus_identity)
from spdefem.geometry import (dodecagon_mesh, mesh_edges, sample_points_in_mesh,
                              unit_square_grid)
from spdefem.harness import (FUNCTIONS, X0_FUNCTIONS, emit_csv, preset,
                             run_convergence_study)
from spdefem.kernels import KernelSpec
from spdefem.noise import NoiseStream, build_spectrum, dense_sampler, pair_covariance
from spdefem.sobolev import TEST_FUNCTIONS, interpolation_rate_study
from spdefem.stepper import AssembledSpde, SpdeProblem

WORKERS = 2
_study_cache = {}


def study(preset_name, index):
    key = (preset_name, index)
    if key not in _study_cache:
        cfg = preset(preset_name, profile="desk")[index]
        _study_cache[key] = (cfg, run_convergence_study(cfg, workers=WORKERS))
    return _study_cache[key]


def verdict(num, name, ok, detail):
    line = f"ACCEPTANCE {num} ({name}): {'PASS' if ok else 'FAIL'} - {detail}"
    print(line, flush=True)
    return ok


# -- criterion 1: deterministic FEM order --------------------------------------------


def test_criterion_1_deterministic_fem_order():
    kappa = 1e-2
    r0 = 0.45

    def bump(pts):
        ss = ((pts[..., 0] - 0.5) ** 2 + (pts[..., 1] - 0.5) ** 2) / r0 ** 2
        return np.where(ss < 1.0, (1.0 - ss) ** 3, 0.0)

    def lap(pts):
        ss = ((pts[..., 0] - 0.5) ** 2 + (pts[..., 1] - 0.5) ** 2) / r0 ** 2
        v = (-12.0 * (1 - ss) ** 2 + 24.0 * ss * (1 - ss)) / r0 ** 2
        return np.where(ss < 1.0, v, 0.0)

    def forcing(u, x):
        return kappa * (-lap(x) + bump(x))

    errs, hs = [], []
    for level in (1, 2, 3, 4):
        prob = SpdeProblem("neumann", scaled_laplacian_plus_identity(kappa),
                           f=forcing, g=None, b_field=None, x0=bump, kernel=None,
                           T=1.0, dt=1e-2, d_level=level, s_level=level + 1)
        asm = AssembledSpde(prob)
        final, _, _ = asm.run()
        g = _geom(asm.mesh)
        exact = bump(g.qp7.reshape(-1, 2)).reshape(g.qp7.shape[:2])
        approx = np.einsum("qi,ti->tq", P7_BARY, final.field.nodal_values()[g.tris])
        errs.append(np.sqrt(quad7(asm.mesh, (exact - approx) ** 2)))
        hs.append(prob.h)
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    ok = abs(slope - 2.0) <= 0.15
    assert verdict(1, "deterministic FEM order", ok, f"fitted L2 rate {slope:.3f} vs 2.0 +- 0.15")


# -- criterion 2: sampler correctness -------------------------------------------------


def test_criterion_2_sampler_correctness():
    kernel = KernelSpec("matern", sigma2=10.0, rho=0.25, nu=0.5)
    grid = unit_square_grid(2)
    dt = 1e-3
    n_samples = 2 * 10 ** 4
    cov = dt * pair_covariance(kernel, grid.mesh.nodes, grid.mesh.nodes)
    d = np.diag(cov)
    se = np.sqrt((np.outer(d, d) + cov ** 2) / n_samples)

    spectrum = build_spectrum(kernel, 2, mode="strict")
    stream = NoiseStream(20240817, 0, spectrum, dt)
    draws = np.empty((n_samples, 25))
    for j in range(n_samples):
        draws[j] = stream.increment_at(j).ravel()
    emp_circ = draws.T @ draws / n_samples

    sampler = dense_sampler(kernel, grid.mesh.nodes, dt)
    dense_draws = sampler.sample(np.random.default_rng(99), size=n_samples)
    emp_dense = dense_draws.T @ dense_draws / n_samples

    dev_circ = float(np.max(np.abs(emp_circ - cov) / se))
    dev_dense = float(np.max(np.abs(emp_dense - cov) / se))
    dev_pair = float(np.max(np.abs(emp_circ - emp_dense) / (np.sqrt(2.0) * se)))
    ok = dev_circ < 5.0 and dev_dense < 5.0 and dev_pair < 5.0
    assert verdict(2, "sampler correctness", ok,
                   f"max|emp-cov|/SE circulant {dev_circ:.2f}, dense {dev_dense:.2f}, "
                   f"cross {dev_pair:.2f} (all < 5)")


# -- criteria 3-5: convergence studies -------------------------------------------------


def test_criterion_3_matern_nu_scan(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("scan")
    results = {}
    for idx, nu in enumerate((0.01, 0.5, 1.0)):
        cfg, rep = study("matern_nu_scan", idx)
        emit_csv(rep, outdir / f"{cfg.name}.csv")
        results[nu] = rep.fitted_rate
    ok_05 = abs(results[0.5] - 1.5) <= 0.25
    ok_10 = results[1.0] >= 1.6
    ok_001 = abs(results[0.01] - 1.0) <= 0.3
    ok = ok_05 and ok_10 and ok_001
    assert verdict(3, "Example 5.6 rate scan", ok,
                   f"fitted nu=0.01: {results[0.01]:.3f} (1.0 +- 0.3), "
                   f"nu=0.5: {results[0.5]:.3f} (1.5 +- 0.25), "
                   f"nu=1.0: {results[1.0]:.3f} (>= 1.6)")


def test_criterion_4_exponential_vs_factorizable():
    _, rep_exp = study("exp_vs_factorizable", 0)
    _, rep_fac = study("exp_vs_factorizable", 1)
    r_exp, r_fac = rep_exp.fitted_rate, rep_fac.fitted_rate
    ok = (abs(r_exp - 1.5) <= 0.25 and abs(r_fac - 1.0) <= 0.25
          and r_exp - r_fac >= 0.3)
    assert verdict(4, "Example 5.7 kernel comparison", ok,
                   f"exponential {r_exp:.3f} (1.5 +- 0.25), "
                   f"factorizable {r_fac:.3f} (1.0 +- 0.25), gap {r_exp - r_fac:.3f} (>= 0.3)")


def test_criterion_5_rough_x0_coarse_noise():
    _, rep_h = study("rough_x0_coarse_noise", 0)
    _, rep_s = study("rough_x0_coarse_noise", 1)
    ratios = [abs(rs[3] / rh[3] - 1.0) for rh, rs in zip(rep_h.rows, rep_s.rows)]
    ok_close = max(ratios) <= 0.25
    ok_rates = abs(rep_h.fitted_rate - 1.0) <= 0.3 and abs(rep_s.fitted_rate - 1.0) <= 0.3
    ok = ok_close and ok_rates
    assert verdict(5, "Example 5.8 coarse-noise coupling", ok,
                   f"per-level |ratio-1| max {max(ratios):.2f} (<= 0.25), "
                   f"rates h'=h {rep_h.fitted_rate:.3f}, h'=sqrt(h) "
                   f"{rep_s.fitted_rate:.3f} (both 1.0 +- 0.3)")


# -- criterion 6: interpolation rates ----------------------------------------------------


def test_criterion_6_interpolation_rates():
    v = TEST_FUNCTIONS["sinsin"]
    res0 = interpolation_rate_study(v, 0.0, 2.0, [2, 3, 4, 5])
    res1 = interpolation_rate_study(v, 1.0, 2.0, [2, 3, 4, 5])
    res_half = interpolation_rate_study(v, 0.5, 2.0, [2, 3, 4], n_pairs=10 ** 6, seed=0)
    stderrs = [row[3] for row in res_half.rows]
    ok = (abs(res0.slope - 2.0) <= 0.1 and abs(res1.slope - 1.0) <= 0.1
          and res_half.slope >= 1.3 and all(se > 0 for se in stderrs))
    assert verdict(6, "interpolation error rates", ok,
                   f"slopes r=0: {res0.slope:.3f} (2.0 +- 0.1), r=1: {res1.slope:.3f} "
                   f"(1.0 +- 0.1), r=0.5: {res_half.slope:.3f} (>= 1.3, "
                   f"stderr {stderrs[-1]:.2e})")


# -- criterion 7: Hilbert-Schmidt bound ----------------------------------------------------


def test_criterion_7_hs_bound():
    kernels = [
        KernelSpec("matern", sigma2=10.0, rho=0.25, nu=0.5),
        KernelSpec("matern", sigma2=10.0, rho=0.25, nu=1.0),
        KernelSpec("gaussian", sigma2=10.0, rho=0.25),
        KernelSpec("poly_wendland1", sigma2=10.0),
        KernelSpec("poly_wendland2", sigma2=10.0),
        KernelSpec("factorizable_exponential", sigma2=10.0, rho=0.25),
    ]
    mesh = dodecagon_mesh(2)
    grid = unit_square_grid(2)
    dofmap = make_dofmap(mesh, "neumann")
    mass = assemble_mass(mesh, dofmap)
    rng = np.random.default_rng(424242)
    worst = -np.inf
    checks = 0
    for kernel in kernels:
        bound_scale = 2.0 * np.sqrt(kernel.sup_abs)
        for _ in range(5):
            b = FemField(mesh, dofmap, rng.standard_normal(dofmap.n_free))
            hs = hs_norm_interpolated(kernel, mesh, grid, b)
            margin = hs / (bound_scale * l2_norm(b, mass))
            worst = max(worst, margin)
            checks += 1
    ok = worst <= 1.0
    assert verdict(7, "Hilbert-Schmidt inequality", ok,
                   f"{checks} kernel/field combinations, worst ratio to bound {worst:.3f}")


# -- criterion 8: property suites ------------------------------------------------------------


def test_criterion_8_property_suites(tmp_path):
    failures = []

    # mesh nesting, partition of unity, conformity
    for level in (0, 1, 2):
        coarse, fine = dodecagon_mesh(level), dodecagon_mesh(level + 1)
        if not np.allclose(fine.nodes[:coarse.n_nodes], coarse.nodes, atol=1e-12):
            failures.append("mesh nesting")
        _, counts = mesh_edges(fine.triangles)
        if not set(np.unique(counts)) <= {1, 2}:
            failures.append("conformity")
    grid = unit_square_grid(3)
    pts, tris, bary = sample_points_in_mesh(grid.mesh, 500, np.random.default_rng(0))
    if not np.allclose(bary.sum(axis=1), 1.0, atol=1e-12):
        failures.append("partition of unity")

    # sampler determinism and byte-identical reports across worker counts
    cfg = preset("matern_nu_scan", profile="desk", master_seed=31)[1]
    cfg.levels, cfg.ref_level, cfg.M, cfg.T, cfg.dt = (1, 2), 4, 2, 0.02, 2e-3
    blobs = []
    for workers in (1, 3):
        rep = run_convergence_study(cfg, workers=workers)
        path = tmp_path / f"w{workers}.csv"
        emit_csv(rep, path)
        blobs.append(hashlib.sha256(path.read_bytes()).hexdigest())
    if blobs[0] != blobs[1]:
        failures.append("parallel determinism")

    # additive-noise affinity identity
    kernel = KernelSpec("matern", sigma2=10.0, rho=0.25, nu=0.5)
    prob = SpdeProblem("neumann", scaled_laplacian_plus_identity(1e-2),
                       f=None, g=lambda u, x: np.ones(np.shape(u)), b_field=None,
                       x0=0.0, kernel=kernel, T=1e-3, dt=1e-3, d_level=2, s_level=3)
    asm = AssembledSpde(prob, cg_tol=1e-13)
    state = asm.initial_state()
    rng = np.random.default_rng(5)
    w1, w2 = rng.standard_normal((2, 9, 9))
    resid = (asm.step(state, w1 + w2).coeffs - asm.step(state, w1).coeffs
             - asm.step(state, w2).coeffs + asm.step(state, np.zeros((9, 9))).coeffs)
    if np.abs(resid).max() > 1e-9:
        failures.append("additive-noise affinity")

    # transfer reproduces linears
    mesh = dodecagon_mesh(2)
    vals = 0.25 + 1.5 * grid.mesh.nodes[:, 0] - 0.5 * grid.mesh.nodes[:, 1]
    out = s.transfer_noise(vals, grid, mesh)
    expect = 0.25 + 1.5 * mesh.nodes[:, 0] - 0.5 * mesh.nodes[:, 1]
    if np.abs(out - expect).max() > 1e-12:
        failures.append("transfer linear reproduction")

    ok = not failures
    assert verdict(8, "property suites", ok,
                   "all module invariants hold" if ok else f"failed: {failures}")
