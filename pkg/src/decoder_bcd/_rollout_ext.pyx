# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled latent rollout and its adjoint.

Row-at-a-time loops keep each row's d values in cache; semantics match
``_rollout_py`` exactly (up to floating-point summation order).
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def rollout(W, topo, double sigma, noise, mask, values):
    cdef const double[:, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef const cnp.int64_t[::1] t = np.ascontiguousarray(topo, dtype=np.int64)
    cdef const double[:, ::1] e = np.ascontiguousarray(noise, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = e.shape[0], d = e.shape[1]
    out = np.zeros((n, d))
    cdef double[:, ::1] z = out
    cdef Py_ssize_t r, p, q, i, j
    cdef double acc
    for r in range(n):
        for p in range(d):
            i = t[p]
            if m[r, i]:
                z[r, i] = v[r, i]
            else:
                acc = 0.0
                for q in range(p):
                    j = t[q]
                    acc = acc + z[r, j] * w[j, i]
                z[r, i] = acc + sigma * e[r, i]
    return out


def rollout_backward(W, topo, double sigma, noise, mask, Z, grad_Z):
    cdef const double[:, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef const cnp.int64_t[::1] t = np.ascontiguousarray(topo, dtype=np.int64)
    cdef const double[:, ::1] e = np.ascontiguousarray(noise, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef const double[:, ::1] z = np.ascontiguousarray(Z, dtype=np.float64)
    adj_arr = np.array(grad_Z, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] adj = adj_arr
    cdef Py_ssize_t n = e.shape[0], d = e.shape[1]
    gw_arr = np.zeros((d, d))
    cdef double[:, ::1] gw = gw_arr
    cdef double gs = 0.0
    cdef Py_ssize_t r, p, q, i, j
    cdef double a
    for r in range(n):
        for p in range(d - 1, -1, -1):
            i = t[p]
            if m[r, i]:
                continue
            a = adj[r, i]
            gs = gs + a * e[r, i]
            for q in range(p):
                j = t[q]
                gw[j, i] = gw[j, i] + a * z[r, j]
                adj[r, j] = adj[r, j] + a * w[j, i]
    return gw_arr, gs
