# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner kernels: CSR matvec, Jacobi-preconditioned CG, load scatter.

Each routine has a numpy twin in ``spdefem.backend``; the two must agree to
rounding differences only.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def csr_matvec(cnp.int32_t[::1] indptr, cnp.int32_t[::1] indices,
               double[::1] data, double[::1] x):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] y = out
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        y[i] = acc
    return out


def scatter_add3(cnp.int32_t[:, ::1] tris, double[:, ::1] weights, double[::1] out):
    """out[tris[t, k]] += weights[t, k] for the three local vertices."""
    cdef Py_ssize_t t, k
    for t in range(tris.shape[0]):
        for k in range(3):
            out[tris[t, k]] += weights[t, k]


def pcg_jacobi(cnp.int32_t[::1] indptr, cnp.int32_t[::1] indices,
               double[::1] data, double[::1] b, double[::1] x,
               double[::1] inv_diag, double tol, Py_ssize_t maxiter):
    """Preconditioned CG on a CSR SPD matrix; x is the in/out iterate.

    Returns (iterations, relative_residual); iterations == -1 flags a solve
    that hit maxiter without reaching tol * ||b||.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef cnp.ndarray[double, ndim=1] r_arr = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] z_arr = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] p_arr = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] ap_arr = np.empty(n)
    cdef double[::1] r = r_arr
    cdef double[::1] z = z_arr
    cdef double[::1] p = p_arr
    cdef double[::1] ap = ap_arr
    cdef Py_ssize_t i, k, it
    cdef double acc, bnorm2, rnorm2, rz, rz_new, alpha, beta, pap, target2

    bnorm2 = 0.0
    for i in range(n):
        bnorm2 += b[i] * b[i]
    if bnorm2 == 0.0:
        for i in range(n):
            x[i] = 0.0
        return 0, 0.0
    target2 = tol * tol * bnorm2

    rnorm2 = 0.0
    rz = 0.0
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        r[i] = b[i] - acc
        z[i] = inv_diag[i] * r[i]
        p[i] = z[i]
        rnorm2 += r[i] * r[i]
        rz += r[i] * z[i]
    if rnorm2 <= target2:
        return 0, sqrt(rnorm2 / bnorm2)

    for it in range(1, maxiter + 1):
        pap = 0.0
        for i in range(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * p[indices[k]]
            ap[i] = acc
            pap += p[i] * acc
        alpha = rz / pap
        rnorm2 = 0.0
        for i in range(n):
            x[i] += alpha * p[i]
            r[i] -= alpha * ap[i]
            rnorm2 += r[i] * r[i]
        if rnorm2 <= target2:
            return it, sqrt(rnorm2 / bnorm2)
        rz_new = 0.0
        for i in range(n):
            z[i] = inv_diag[i] * r[i]
            rz_new += r[i] * z[i]
        beta = rz_new / rz
        rz = rz_new
        for i in range(n):
            p[i] = z[i] + beta * p[i]

    return -1, sqrt(rnorm2 / bnorm2)
