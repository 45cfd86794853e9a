# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: sparse polynomial evaluation and Gauss-Legendre steps.

Polynomials arrive as CSR-like arrays (see ``hybridphase.kernels.SparseTerms``).
Each particle (row of ``y``) is processed independently, so results never
depend on how a batch is assembled.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef cnp.intp_t idx_t


cdef inline double _ipow(double v, idx_t e) noexcept nogil:
    cdef double r = 1.0
    while e > 0:
        if e & 1:
            r *= v
        v *= v
        e >>= 1
    return r


cdef inline void _accumulate(
    const double* y,
    double* out,
    const double[::1] coef,
    const idx_t[::1] target,
    const idx_t[::1] group,
    const idx_t[::1] ptr,
    const idx_t[::1] var,
    const idx_t[::1] exp,
    const double[::1] scales,
) noexcept nogil:
    cdef Py_ssize_t m, f
    cdef double v
    for m in range(coef.shape[0]):
        v = coef[m] * scales[group[m]]
        if v == 0.0:
            continue
        for f in range(ptr[m], ptr[m + 1]):
            v *= _ipow(y[var[f]], exp[f])
        out[target[m]] += v


def evaluate(
    const double[:, ::1] y,
    const double[::1] coef,
    const idx_t[::1] target,
    const idx_t[::1] group,
    const idx_t[::1] ptr,
    const idx_t[::1] var,
    const idx_t[::1] exp,
    const double[::1] scales,
):
    """Value of a compiled polynomial at every row of ``y``; shape ``(B,)``."""
    cdef Py_ssize_t B = y.shape[0], b
    out = np.zeros(B, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for b in range(B):
            _accumulate(&y[b, 0] if y.shape[1] else NULL, &o[b], coef, target, group, ptr, var, exp, scales)
    return out


def vector_field(
    const double[:, ::1] y,
    const double[::1] coef,
    const idx_t[::1] target,
    const idx_t[::1] group,
    const idx_t[::1] ptr,
    const idx_t[::1] var,
    const idx_t[::1] exp,
    const double[::1] scales,
):
    """Hamiltonian vector field rows (targets carry the symplectic signs)."""
    cdef Py_ssize_t B = y.shape[0], D = y.shape[1], b
    out = np.zeros((B, D), dtype=np.float64)
    cdef double[:, ::1] o = out
    if D == 0:
        return out
    with nogil:
        for b in range(B):
            _accumulate(&y[b, 0], &o[b, 0], coef, target, group, ptr, var, exp, scales)
    return out


def gauss_step(
    const double[:, ::1] y,
    double dt,
    const double[:, ::1] A,
    const double[::1] bw,
    const double[::1] coef,
    const idx_t[::1] target,
    const idx_t[::1] group,
    const idx_t[::1] ptr,
    const idx_t[::1] var,
    const idx_t[::1] exp,
    const double[::1] scales,
    double tol,
    int maxit,
):
    """One s-stage collocation step per row, solved by fixed-point iteration.

    Returns ``(y_new, iterations, residual)``; ``iterations[b] == -1`` marks a
    row whose stage iteration did not reach ``tol`` within ``maxit`` sweeps.
    """
    cdef Py_ssize_t B = y.shape[0], D = y.shape[1], s = bw.shape[0]
    cdef Py_ssize_t b, i, j, d, it
    ynew_arr = np.empty((B, D), dtype=np.float64)
    iters_arr = np.zeros(B, dtype=np.intp)
    resid_arr = np.zeros(B, dtype=np.float64)
    cdef double[:, ::1] ynew = ynew_arr
    cdef idx_t[::1] iters = iters_arr
    cdef double[::1] resid = resid_arr
    if D == 0:
        return ynew_arr, iters_arr, resid_arr
    cdef double* K = <double*> malloc(s * D * sizeof(double))
    cdef double* Kn = <double*> malloc(s * D * sizeof(double))
    cdef double* Y = <double*> malloc(D * sizeof(double))
    cdef double err, diff, acc
    cdef bint done
    if K == NULL or Kn == NULL or Y == NULL:
        free(K); free(Kn); free(Y)
        raise MemoryError()
    try:
        with nogil:
            for b in range(B):
                for d in range(D):
                    Y[d] = 0.0
                _accumulate(&y[b, 0], Y, coef, target, group, ptr, var, exp, scales)
                for i in range(s):
                    for d in range(D):
                        K[i * D + d] = Y[d]
                done = False
                err = 0.0
                it = 0
                while it < maxit:
                    it += 1
                    err = 0.0
                    for i in range(s):
                        for d in range(D):
                            acc = 0.0
                            for j in range(s):
                                acc = acc + A[i, j] * K[j * D + d]
                            Y[d] = y[b, d] + dt * acc
                        for d in range(D):
                            Kn[i * D + d] = 0.0
                        _accumulate(Y, &Kn[i * D], coef, target, group, ptr, var, exp, scales)
                    for i in range(s * D):
                        diff = fabs(dt * (Kn[i] - K[i]))
                        if diff > err:
                            err = diff
                        K[i] = Kn[i]
                    if err <= tol:
                        done = True
                        break
                for d in range(D):
                    acc = 0.0
                    for i in range(s):
                        acc = acc + bw[i] * K[i * D + d]
                    ynew[b, d] = y[b, d] + dt * acc
                iters[b] = it if done else -1
                resid[b] = err
    finally:
        free(K)
        free(Kn)
        free(Y)
    return ynew_arr, iters_arr, resid_arr
