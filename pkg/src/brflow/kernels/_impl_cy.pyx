# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled assembly kernels; mirrors _impl_py exactly."""

import numpy as np

cimport cython
from libc.math cimport exp, expm1, fabs, isnan


cdef inline double _bern(double s) except? -1.0:
    if isnan(s):
        raise ValueError("NaN input to Bernoulli function")
    if fabs(s) < 1e-4:
        return 1.0 - s / 2.0 + s * s / 12.0 - s * s * s * s / 720.0
    if s > 700.0:
        return s * exp(-s)
    return s / expm1(s)


def bernoulli(s):
    """Bernoulli function B(s) = s/(e^s - 1), B(0) = 1 (elementwise)."""
    arr = np.ascontiguousarray(np.atleast_1d(np.asarray(s, dtype=np.float64)))
    cdef double[::1] flat = arr.reshape(-1)
    out = np.empty(flat.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(flat.shape[0]):
        o[i] = _bern(flat[i])
    res = out.reshape(arr.shape)
    if np.asarray(s).ndim == 0:
        return res.reshape(())
    return res


def p1_local_stiffness(grads, vols):
    """Per-cell P1 stiffness matrices a_ij = |T| grad(lam_i).grad(lam_j)."""
    g = np.ascontiguousarray(grads, dtype=np.float64)
    v = np.ascontiguousarray(vols, dtype=np.float64)
    cdef double[:, :, ::1] G = g
    cdef double[::1] V = v
    cdef Py_ssize_t nc = G.shape[0], nloc = G.shape[1], d = G.shape[2]
    out = np.empty((nc, nloc, nloc), dtype=np.float64)
    cdef double[:, :, ::1] A = out
    cdef Py_ssize_t c, i, j, k
    cdef double acc
    for c in range(nc):
        for i in range(nloc):
            for j in range(nloc):
                acc = 0.0
                for k in range(d):
                    acc += G[c, i, k] * G[c, j, k]
                A[c, i, j] = V[c] * acc
    return out


def eafe_local_matrices(cells, vertices, grads, vols, conv, eps):
    """Per-cell EAFE matrices; see the NumPy twin for the entry convention."""
    cl = np.ascontiguousarray(cells, dtype=np.int64)
    vx = np.ascontiguousarray(vertices, dtype=np.float64)
    cv = np.ascontiguousarray(conv, dtype=np.float64)
    a_loc = p1_local_stiffness(grads, vols)
    cdef long long[:, ::1] C = cl
    cdef double[:, ::1] X = vx
    cdef double[:, ::1] B = cv
    cdef double[:, :, ::1] A = a_loc
    cdef double epsi = eps
    cdef Py_ssize_t nc = C.shape[0], nloc = C.shape[1], d = X.shape[1]
    out = np.zeros((nc, nloc, nloc), dtype=np.float64)
    cdef double[:, :, ::1] M = out
    cdef Py_ssize_t c, a, b, t, r, k
    cdef long long gi, gj, lo, hi
    cdef double s, wf, wb, row
    for c in range(nc):
        for a in range(nloc):
            for b in range(a + 1, nloc):
                gi = C[c, a]
                gj = C[c, b]
                if gi < gj:
                    lo = gi; hi = gj
                else:
                    lo = gj; hi = gi
                s = 0.0
                for k in range(d):
                    s += B[c, k] * (X[hi, k] - X[lo, k])
                s /= epsi
                wf = epsi * A[c, a, b] * _bern(s)
                wb = epsi * A[c, a, b] * _bern(-s)
                if gi < gj:
                    M[c, a, b] = wf
                    M[c, b, a] = wb
                else:
                    M[c, b, a] = wf
                    M[c, a, b] = wb
        for t in range(nloc):
            row = 0.0
            for r in range(nloc):
                if r != t:
                    row += M[c, t, r]
            M[c, t, t] = -row
    return out
