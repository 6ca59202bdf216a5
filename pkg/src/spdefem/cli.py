"""Command-line interface.

Subcommands: mesh, sample, solve, study, interp-study. Exit codes: 0 success,
2 configuration error, 3 numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import harness, sobolev
from .errors import ConfigurationError, NumericError
from .fem import dump_field
from .geometry import dodecagon_mesh, dump_mesh, unit_square_grid
from .kernels import KernelSpec
from .noise import NoiseStream, build_spectrum, write_increment
from .stepper import AssembledSpde


def _parse_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    return values


def _kernel_from_keys(values, prefix="kernel."):
    variant = values.get(prefix + "variant")
    if variant is None:
        return None
    variant = variant.strip().lower()
    kwargs = {"sigma2": float(values.get(prefix + "sigma2", 1.0))}
    if variant == "exponential":
        variant = "matern"
        kwargs["nu"] = 0.5
    if prefix + "rho" in values:
        kwargs["rho"] = float(values[prefix + "rho"])
    if prefix + "nu" in values:
        kwargs["nu"] = float(values[prefix + "nu"])
    if prefix + "support_radius" in values:
        kwargs["support_radius"] = float(values[prefix + "support_radius"])
    return KernelSpec(variant, **kwargs)


def _scalar_function(spec_str):
    """Parse f/g specs: sums of constants and named terms, e.g. '0.1+saturating'."""
    spec_str = spec_str.strip()
    if spec_str in ("0", "zero", "none", ""):
        return None
    if spec_str in harness.FUNCTIONS:
        return harness.FUNCTIONS[spec_str]
    terms = [t.strip() for t in spec_str.split("+")]
    const = 0.0
    saturating = False
    for term in terms:
        if term == "saturating":
            saturating = True
        else:
            try:
                const += float(term)
            except ValueError:
                raise ConfigurationError(f"unknown scalar function term {term!r}") from None
    if saturating:
        fn = lambda u, x, c=const: c + u / (np.abs(u) + 1.0)
    else:
        fn = lambda u, x, c=const: np.full(np.shape(u), c)
    return harness.NamedFunction(spec_str, fn)


def _x0_function(spec_str):
    spec_str = (spec_str or "zero").strip()
    if spec_str in harness.X0_FUNCTIONS:
        return harness.X0_FUNCTIONS[spec_str]
    try:
        val = float(spec_str)
    except ValueError:
        raise ConfigurationError(f"unknown x0 spec {spec_str!r}") from None
    return harness.NamedFunction(spec_str, lambda pts, v=val: np.full(pts.shape[:-1], v))


def _vector_field(spec_str):
    spec_str = (spec_str or "0").strip()
    if spec_str in ("0", "zero", "none", ""):
        return None
    parts = [float(t) for t in spec_str.split(",")]
    if len(parts) != 2:
        raise ConfigurationError(f"advection field must be 'bx,by', got {spec_str!r}")
    return np.array(parts)


def _cmd_mesh(args):
    if args.family == "dodecagon":
        mesh = dodecagon_mesh(args.level)
    elif args.family == "square":
        mesh = unit_square_grid(args.level).mesh
    else:
        raise ConfigurationError(f"unknown mesh family {args.family!r}")
    print(f"{args.family} level {args.level}: {mesh.n_nodes} nodes, "
          f"{mesh.n_triangles} triangles, h_max {mesh.h_max:.6g}, "
          f"{mesh.boundary_nodes.shape[0]} boundary nodes")
    if args.dump:
        dump_mesh(mesh, args.dump)
        print(f"wrote {args.dump}")
    return 0


def _cmd_sample(args):
    kernel = KernelSpec(
        "matern" if args.kernel == "exponential" else args.kernel,
        sigma2=args.sigma2, rho=args.rho,
        nu=(0.5 if args.kernel == "exponential" else args.nu),
        support_radius=args.support_radius)
    spectrum = build_spectrum(kernel, args.level, max_padding_doublings=args.max_padding,
                              mode=args.mode)
    stream = NoiseStream(args.seed, args.sample_index, spectrum, args.dt)
    field = stream.increment_at(args.step)
    print(f"kernel {kernel.variant}, grid level {args.level}: embed {spectrum.embed_size}, "
          f"clipped {spectrum.clip_count} eigenvalues "
          f"(mass fraction {spectrum.clipped_mass_fraction:.3e})")
    print(f"increment step {args.step}: min {field.min():.6g}, max {field.max():.6g}, "
          f"std {field.std():.6g}")
    if args.out:
        write_increment(args.out, field, args.level, args.step)
        print(f"wrote {args.out}")
    return 0


def _cmd_solve(args):
    values = _parse_config_file(args.config)
    kernel = _kernel_from_keys(values)
    g = _scalar_function(values.get("problem.g", "0"))
    if g is not None and kernel is None:
        raise ConfigurationError("problem.g needs a kernel.variant section")
    dt = float(values.get("problem.dt", 1e-3))
    d_level = int(values.get("problem.d_level", 3))
    s_level = int(values.get("noise.grid_level", d_level + 1))
    problem_kwargs = dict(
        bc=values.get("problem.bc", "neumann").lower(),
        coeffs=harness.scaled_laplacian_plus_identity(float(values.get("operator.scale", 1e-2))),
        f=_scalar_function(values.get("problem.f", "0")),
        g=g,
        b_field=_vector_field(values.get("problem.b", "0")),
        x0=_x0_function(values.get("problem.x0", "zero")),
        kernel=kernel,
        T=float(values.get("problem.T", 1.0)),
        dt=dt, d_level=d_level, s_level=s_level,
    )
    from .stepper import SpdeProblem
    problem = SpdeProblem(**problem_kwargs)
    assembled = AssembledSpde(problem)
    stream = None
    if g is not None:
        spectrum = build_spectrum(kernel, s_level,
                                  max_padding_doublings=int(values.get("noise.max_padding", 4)),
                                  mode=values.get("noise.embedding_mode", "clip"))
        stream = NoiseStream(int(values.get("noise.master_seed", harness.DEFAULT_SEED)),
                             int(values.get("noise.sample_index", 0)), spectrum, dt)
    record = set()
    if args.snapshot:
        times = [float(t) for t in args.snapshot.split(",")]
        record = {int(round(t / dt)) for t in times}
    final, snaps, _ = assembled.run(stream, record_at=record)
    from .fem import assemble_mass, l2_norm
    print(f"solved to T={problem.T} in {problem.n_steps} steps on level {d_level}: "
          f"|X(T)|_L2 = {l2_norm(final.field, assembled.mass):.8g}")
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    for j, fld in sorted(snaps.items()):
        path = os.path.join(outdir, f"field_step{j:06d}.txt")
        dump_field(fld, path)
        print(f"wrote {path}")
    if args.dump_final:
        path = os.path.join(outdir, "field_final.txt")
        dump_field(final.field, path)
        print(f"wrote {path}")
    return 0


def _cmd_study(args):
    configs = harness.preset(args.preset, profile=args.profile, master_seed=args.seed)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    for config in configs:
        report = harness.run_convergence_study(config, workers=args.workers)
        path = os.path.join(outdir, f"{config.name}.csv")
        harness.emit_csv(report, path)
        pred = report.predicted
        pred_txt = (f"predicted 1+r1 {1 + pred.r1_sup:.3g}, r2 {pred.r2_sup:.3g}"
                    if pred else "no prediction")
        print(f"{config.name}: fitted rate {report.fitted_rate:.3f} ({pred_txt}); "
              f"{report.wall_time:.1f}s -> {path}")
    return 0


def _cmd_interp_study(args):
    if args.function not in sobolev.TEST_FUNCTIONS:
        raise ConfigurationError(
            f"unknown function {args.function!r}; use one of {tuple(sobolev.TEST_FUNCTIONS)}")
    v = sobolev.TEST_FUNCTIONS[args.function]
    levels = [int(t) for t in args.levels.split(",")]
    result = sobolev.interpolation_rate_study(
        v, args.r, args.p, levels, mesh_family=args.family,
        n_pairs=args.pairs, seed=args.seed)
    for level, h, err, se in result.rows:
        print(f"level {level}: h {h:.4e} error {err:.6e} stderr {se:.2e}")
    print(f"slope {result.slope:.4f}")
    if args.out:
        sobolev.write_interp_csv(result, args.out)
        print(f"wrote {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spdefem",
        description="FEM approximation of semilinear parabolic SPDEs with "
                    "grid-sampled, interpolated Gaussian noise")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="build a mesh and optionally dump it")
    p.add_argument("family", choices=["dodecagon", "square"])
    p.add_argument("level", type=int)
    p.add_argument("--dump", metavar="PATH")
    p.set_defaults(fn=_cmd_mesh)

    p = sub.add_parser("sample", help="draw one noise increment by circulant embedding")
    p.add_argument("--kernel", default="matern",
                   choices=["matern", "exponential", "gaussian", "poly_wendland1",
                            "poly_wendland2", "factorizable_exponential"])
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=0.25)
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--support-radius", dest="support_radius", type=float, default=1.0)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sample-index", type=int, default=0)
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--mode", choices=["strict", "clip"], default="clip")
    p.add_argument("--max-padding", type=int, default=4)
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("solve", help="run one trajectory from a key=value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--snapshot", metavar="t1,t2,...", help="times to dump fields at")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--dump-final", action="store_true")
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("study", help="run a preset convergence study, write CSVs")
    p.add_argument("--preset", required=True, choices=list(harness.PRESET_NAMES))
    p.add_argument("--profile", choices=sorted(harness.PROFILES), default="desk")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=harness.DEFAULT_SEED)
    p.set_defaults(fn=_cmd_study)

    p = sub.add_parser("interp-study", help="P1 interpolation error decay in (r,p)-norms")
    p.add_argument("--function", required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--levels", required=True, metavar="l1,l2,...")
    p.add_argument("--family", choices=["square", "dodecagon"], default="square")
    p.add_argument("--pairs", type=int, default=10 ** 6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(fn=_cmd_interp_study)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
