# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch solver for small box-constrained convex QPs.

Mirrors ``combifd.boxqp.box_qp`` step for step (same pivoting rules and
tolerances) so both backends return the same iterates up to rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, isfinite
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef int _cholesky_solve(double* M, double* rhs, int f) noexcept nogil:
    # in-place lower Cholesky of the f x f row-major M, then solve M y = rhs
    cdef int i, j, p
    cdef double s
    for j in range(f):
        s = M[j * f + j]
        for p in range(j):
            s -= M[j * f + p] * M[j * f + p]
        if s <= 0.0:
            return -1
        s = sqrt(s)
        M[j * f + j] = s
        for i in range(j + 1, f):
            s = M[i * f + j]
            for p in range(j):
                s -= M[i * f + p] * M[j * f + p]
            M[i * f + j] = s / M[j * f + j]
    for i in range(f):
        s = rhs[i]
        for p in range(i):
            s -= M[i * f + p] * rhs[p]
        rhs[i] = s / M[i * f + i]
    for i in range(f - 1, -1, -1):
        s = rhs[i]
        for p in range(i + 1, f):
            s -= M[p * f + i] * rhs[p]
        rhs[i] = s / M[i * f + i]
    return 0


cdef int _solve_one(const double* G, const double* c, const double* lo, const double* hi, double* x0,
                    double* x, double* grad, signed char* state, int k,
                    int max_iter, double ridge, int backup_n,
                    int* idx, double* M, double* rhs, int* iters) noexcept nogil:
    cdef int i, j, p, f, it, ninf, best_ninf, backup, last
    cdef double eps, dmax, scale, gmax, xs, tol_x, tol_g, s, rg
    cdef bint bad

    dmax = 1.0
    gmax = 0.0
    scale = 1.0
    for i in range(k):
        if fabs(G[i * k + i]) > dmax:
            dmax = fabs(G[i * k + i])
        if fabs(c[i]) > scale:
            scale = fabs(c[i])
        for j in range(k):
            if fabs(G[i * k + j]) > gmax:
                gmax = fabs(G[i * k + j])
    eps = ridge * dmax

    for i in range(k):
        s = x0[i]
        if s < lo[i]:
            s = lo[i]
        if s > hi[i]:
            s = hi[i]
        if not isfinite(s):
            s = 0.0
        x0[i] = s
        x[i] = s
        state[i] = 0
        if isfinite(lo[i]) and s <= lo[i]:
            state[i] = 1
        if isfinite(hi[i]) and s >= hi[i]:
            state[i] = 2
        if lo[i] == hi[i]:
            state[i] = 3

    best_ninf = k + 1
    backup = backup_n
    for it in range(1, max_iter + 1):
        for i in range(k):
            if state[i] == 1 or state[i] == 3:
                x[i] = lo[i]
            elif state[i] == 2:
                x[i] = hi[i]
        f = 0
        for i in range(k):
            if state[i] == 0:
                idx[f] = i
                f += 1
        if f > 0:
            for p in range(f):
                i = idx[p]
                s = -c[i] + eps * x0[i]
                for j in range(k):
                    if state[j] != 0:
                        s -= G[i * k + j] * x[j]
                rhs[p] = s
                for j in range(f):
                    M[p * f + j] = G[i * k + idx[j]]
                M[p * f + p] += eps
            if _cholesky_solve(M, rhs, f) != 0:
                iters[0] = it
                return 2
            for p in range(f):
                x[idx[p]] = rhs[p]
        xs = 1.0
        for i in range(k):
            s = c[i]
            for j in range(k):
                s += G[i * k + j] * x[j]
            grad[i] = s
            if fabs(x[i]) > xs:
                xs = fabs(x[i])
        tol_x = 1e-12 * xs
        tol_g = 1e-11 * (scale if scale > gmax * xs else gmax * xs)
        ninf = 0
        last = -1
        for i in range(k):
            rg = grad[i] + eps * (x[i] - x0[i])
            bad = False
            if state[i] == 0:
                bad = (x[i] < lo[i] - tol_x) or (x[i] > hi[i] + tol_x)
            elif state[i] == 1:
                bad = rg < -tol_g
            elif state[i] == 2:
                bad = rg > tol_g
            idx[i] = 1 if bad else 0
            if bad:
                ninf += 1
                last = i
        if ninf == 0:
            iters[0] = it
            return 0
        if ninf < best_ninf:
            best_ninf = ninf
            backup = backup_n
        elif backup > 0:
            backup -= 1
        else:
            for i in range(k):
                idx[i] = 0
            idx[last] = 1
        for i in range(k):
            if idx[i]:
                if state[i] == 0:
                    state[i] = 1 if x[i] < lo[i] else 2
                else:
                    state[i] = 0
    for i in range(k):
        if x[i] < lo[i]:
            x[i] = lo[i]
        if x[i] > hi[i]:
            x[i] = hi[i]
    for i in range(k):
        s = c[i]
        for j in range(k):
            s += G[i * k + j] * x[j]
        grad[i] = s
    iters[0] = max_iter
    return 1


def box_qp_batch(const double[:, :, ::1] G, const double[:, ::1] c, const double[:, ::1] lo,
                 const double[:, ::1] hi, const double[:, ::1] x0, int max_iter,
                 double ridge, int backup_n):
    cdef Py_ssize_t B = c.shape[0]
    cdef int k = <int> c.shape[1]
    cdef Py_ssize_t b
    x_arr = np.empty((B, k), dtype=np.float64)
    g_arr = np.empty((B, k), dtype=np.float64)
    st_arr = np.empty(B, dtype=np.int32)
    it_arr = np.empty(B, dtype=np.int32)
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] grad = g_arr
    cdef int[::1] status = st_arr
    cdef int[::1] iters = it_arr
    cdef double[:, ::1] start = np.array(x0, dtype=np.float64, copy=True)
    cdef signed char* state = <signed char*> malloc(k * sizeof(signed char))
    cdef int* idx = <int*> malloc(k * sizeof(int))
    cdef double* M = <double*> malloc(k * k * sizeof(double))
    cdef double* rhs = <double*> malloc(k * sizeof(double))
    cdef int it
    if state == NULL or idx == NULL or M == NULL or rhs == NULL:
        free(state); free(idx); free(M); free(rhs)
        raise MemoryError()
    try:
        with nogil:
            for b in range(B):
                status[b] = _solve_one(&G[b, 0, 0], &c[b, 0], &lo[b, 0], &hi[b, 0],
                                       &start[b, 0], &x[b, 0], &grad[b, 0], state, k,
                                       max_iter, ridge, backup_n, idx, M, rhs, &it)
                iters[b] = it
    finally:
        free(state); free(idx); free(M); free(rhs)
    return x_arr, g_arr, st_arr, it_arr
