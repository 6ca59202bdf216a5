"""Hot-kernel backends: compiled Cython core with a numpy/scipy fallback.

The compiled module is preferred when importable; set SPDEFEM_BACKEND=pure
(or =compiled) to force a choice. ``benchmarks/bench_backends.py`` compares
the two on representative workloads.
"""

import os

import numpy as np
import scipy.sparse as sp

try:
    from . import _speedups
except ImportError:  # pragma: no cover - depends on build environment
    _speedups = None

_choice = os.environ.get("SPDEFEM_BACKEND", "").strip().lower()
if _choice == "pure":
    _impl = None
elif _choice == "compiled":
    if _speedups is None:
        raise ImportError("SPDEFEM_BACKEND=compiled but spdefem._speedups is not built")
    _impl = _speedups
elif _choice == "":
    _impl = _speedups
else:
    raise ValueError(f"unknown SPDEFEM_BACKEND {_choice!r}; use 'pure' or 'compiled'")

ACTIVE = "compiled" if _impl is not None else "pure"


# -- pure (numpy/scipy) twins --------------------------------------------------

def _as_scipy(indptr, indices, data):
    n = indptr.shape[0] - 1
    return sp.csr_matrix((data, indices, indptr), shape=(n, n), copy=False)


def pure_csr_matvec(indptr, indices, data, x):
    return _as_scipy(indptr, indices, data) @ x


def pure_scatter_add3(tris, weights, out):
    out += np.bincount(tris.ravel(), weights=weights.ravel(), minlength=out.shape[0])


def pure_pcg_jacobi(indptr, indices, data, b, x, inv_diag, tol, maxiter):
    mat = _as_scipy(indptr, indices, data)
    bnorm2 = float(b @ b)
    if bnorm2 == 0.0:
        x[:] = 0.0
        return 0, 0.0
    target2 = tol * tol * bnorm2
    r = b - mat @ x
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    rnorm2 = float(r @ r)
    if rnorm2 <= target2:
        return 0, float(np.sqrt(rnorm2 / bnorm2))
    for it in range(1, maxiter + 1):
        ap = mat @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rnorm2 = float(r @ r)
        if rnorm2 <= target2:
            return it, float(np.sqrt(rnorm2 / bnorm2))
        z = inv_diag * r
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return -1, float(np.sqrt(rnorm2 / bnorm2))


# -- compiled twins (thin wrappers) -------------------------------------------

def compiled_csr_matvec(indptr, indices, data, x):
    return _speedups.csr_matvec(indptr, indices, data, np.ascontiguousarray(x))


def compiled_scatter_add3(tris, weights, out):
    _speedups.scatter_add3(tris, np.ascontiguousarray(weights), out)


def compiled_pcg_jacobi(indptr, indices, data, b, x, inv_diag, tol, maxiter):
    return _speedups.pcg_jacobi(indptr, indices, data,
                                np.ascontiguousarray(b), x, inv_diag, tol, maxiter)


# -- dispatch -----------------------------------------------------------------

if _impl is not None:
    csr_matvec = compiled_csr_matvec
    scatter_add3 = compiled_scatter_add3
    pcg_jacobi = compiled_pcg_jacobi
else:
    csr_matvec = pure_csr_matvec
    scatter_add3 = pure_scatter_add3
    pcg_jacobi = pure_pcg_jacobi
