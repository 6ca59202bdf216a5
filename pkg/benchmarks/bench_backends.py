#!/usr/bin/env python3
"""Benchmark the compiled hot kernels against the numpy/scipy fallback.

Workloads mirror the time-stepping inner loop: CSR matvec and Jacobi-PCG on
the assembled (M + dt S) system, and the per-triangle load scatter. Run after
building the extension:

    python3 benchmarks/bench_backends.py [--level 5] [--repeats 5]
"""

import argparse
import time

import numpy as np

from spdefem import backend
from spdefem.fem import assemble_mass, assemble_stiffness, make_dofmap, \
    scaled_laplacian_plus_identity, _geom
from spdefem.geometry import dodecagon_mesh


def timeit(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--level", type=int, default=5)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if backend._speedups is None:
        raise SystemExit("compiled backend not built; run pip install -e . first")

    mesh = dodecagon_mesh(args.level)
    dofmap = make_dofmap(mesh, "neumann")
    mass = assemble_mass(mesh, dofmap)
    stiff = assemble_stiffness(mesh, dofmap, scaled_laplacian_plus_identity(1e-2))
    system = mass.combine(1.0, stiff, 2e-3)
    rng = np.random.default_rng(0)
    rhs = rng.standard_normal(system.n)
    geom = _geom(mesh)
    weights = rng.standard_normal((mesh.n_triangles, 3))

    print(f"dodecagon level {args.level}: {system.n} dofs, {system.data.size} nonzeros, "
          f"{mesh.n_triangles} triangles")
    print(f"{'kernel':<22}{'pure':>12}{'compiled':>12}{'speedup':>10}")

    rows = []

    def matvec(impl):
        return lambda: impl(system.indptr, system.indices, system.data, rhs)

    rows.append(("csr_matvec",
                 timeit(matvec(backend.pure_csr_matvec), args.repeats * 20),
                 timeit(matvec(backend.compiled_csr_matvec), args.repeats * 20)))

    def pcg(impl):
        def run():
            x = np.zeros(system.n)
            impl(system.indptr, system.indices, system.data, rhs, x,
                 system.inv_diag, 1e-10, 10 * system.n)
            return x
        return run

    rows.append(("pcg_jacobi (1 solve)",
                 timeit(pcg(backend.pure_pcg_jacobi), args.repeats),
                 timeit(pcg(backend.compiled_pcg_jacobi), args.repeats)))

    def scatter(impl):
        def run():
            out = np.zeros(mesh.n_nodes)
            impl(geom.tris, weights, out)
            return out
        return run

    rows.append(("scatter_add3",
                 timeit(scatter(backend.pure_scatter_add3), args.repeats * 20),
                 timeit(scatter(backend.compiled_scatter_add3), args.repeats * 20)))

    for name, pure, fast in rows:
        print(f"{name:<22}{pure * 1e3:>10.3f}ms{fast * 1e3:>10.3f}ms{pure / fast:>9.2f}x")

    x_pure = pcg(backend.pure_pcg_jacobi)()
    x_fast = pcg(backend.compiled_pcg_jacobi)()
    dev = np.abs(x_pure - x_fast).max() / max(np.abs(x_pure).max(), 1e-300)
    print(f"\nbackend agreement (pcg solution, relative): {dev:.2e}")


if __name__ == "__main__":
    main()
