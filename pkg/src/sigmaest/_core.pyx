# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner-loop kernels; see ``_kernels_py`` for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, fabs

cnp.import_array()

cdef double CT_SERIES_THRESHOLD = 1e-4


def sigma_moments(const double[:, ::1] Y, const double[::1] wm, const double[::1] wc):
    cdef Py_ssize_t N = Y.shape[0], d = Y.shape[1], i, a, b
    mean_arr = np.zeros(d)
    cov_arr = np.zeros((d, d))
    cdef double[::1] mean = mean_arr
    cdef double[:, ::1] cov = cov_arr
    cdef double[::1] dev = np.empty(d)
    cdef double wi
    for i in range(N):
        wi = wm[i]
        for a in range(d):
            mean[a] += wi * Y[i, a]
    for i in range(N):
        wi = wc[i]
        for a in range(d):
            dev[a] = Y[i, a] - mean[a]
        for a in range(d):
            for b in range(a + 1):
                cov[a, b] += wi * dev[a] * dev[b]
    for a in range(d):
        for b in range(a):
            cov[b, a] = cov[a, b]
    return mean_arr, cov_arr


def weighted_cross(const double[:, ::1] A, const double[:, ::1] B, const double[::1] w):
    cdef Py_ssize_t N = A.shape[0], p = A.shape[1], q = B.shape[1], i, a, b
    out_arr = np.zeros((p, q))
    cdef double[:, ::1] out = out_arr
    cdef double s
    for i in range(N):
        for a in range(p):
            s = w[i] * A[i, a]
            for b in range(q):
                out[a, b] += s * B[i, b]
    return out_arr


def weighted_cross_batch(const double[:, :, ::1] A, const double[:, ::1] B, const double[::1] w):
    cdef Py_ssize_t m = A.shape[0], N = A.shape[1], p = A.shape[2], q = B.shape[1], k, i, a, b
    out_arr = np.zeros((m, p, q))
    cdef double[:, :, ::1] out = out_arr
    cdef double s
    for k in range(m):
        for i in range(N):
            for a in range(p):
                s = w[i] * A[k, i, a]
                for b in range(q):
                    out[k, a, b] += s * B[i, b]
    return out_arr


def systematic_resample(const double[::1] weights, double u):
    cdef Py_ssize_t n = weights.shape[0], i, j = 0
    idx_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double cdf = weights[0], pos
    for i in range(n):
        pos = (u + i) / n
        while pos >= cdf and j < n - 1:
            j += 1
            cdf += weights[j]
        idx[i] = j
    return idx_arr


def ct_transition(const double[:, ::1] X, double dt):
    cdef Py_ssize_t N = X.shape[0], i
    out_arr = np.empty((N, 5))
    cdef double[:, ::1] out = out_arr
    cdef double w, wdt, s, c, a, b, v1, v2
    for i in range(N):
        v1 = X[i, 2]
        v2 = X[i, 3]
        w = X[i, 4]
        wdt = w * dt
        s = sin(wdt)
        c = cos(wdt)
        if fabs(wdt) < CT_SERIES_THRESHOLD:
            a = dt - w * w * dt * dt * dt / 6.0
            b = -w * dt * dt / 2.0 + w * w * w * dt * dt * dt * dt / 24.0
        else:
            a = s / w
            b = (c - 1.0) / w
        out[i, 0] = X[i, 0] + a * v1 + b * v2
        out[i, 1] = X[i, 1] - b * v1 + a * v2
        out[i, 2] = c * v1 - s * v2
        out[i, 3] = s * v1 + c * v2
        out[i, 4] = w
    return out_arr
