# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled message-passing kernels.

Same contracts as ``pybackend``; see that module for the reference
semantics. All inputs must be C-contiguous float64 / int64 arrays.
"""
from libc.math cimport exp, INFINITY

import numpy as np
cimport numpy as cnp

cnp.import_array()


def mm_stable(const double[:, ::1] a, const double[:, ::1] b):
    # Row-independent matmul: row i of the result depends only on a[i] and b,
    # with a fixed accumulation order, so appending rows to `a` never changes
    # the rows already present.
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, p
    cdef double aik
    for i in range(m):
        for p in range(k):
            aik = a[i, p]
            for j in range(n):
                o[i, j] += aik * b[p, j]
    return out


def gather_rows(const double[:, ::1] x, const cnp.int64_t[::1] idx):
    cdef Py_ssize_t m = idx.shape[0], c = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((m, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, r
    for i in range(m):
        r = idx[i]
        for j in range(c):
            o[i, j] = x[r, j]
    return out


def scatter_add_rows(const double[:, ::1] rows, const cnp.int64_t[::1] idx, Py_ssize_t n_rows):
    cdef Py_ssize_t m = rows.shape[0], c = rows.shape[1]
    cdef cnp.ndarray[double, ndim=2] out_arr = np.zeros((n_rows, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, r
    for i in range(m):
        r = idx[i]
        for j in range(c):
            out[r, j] += rows[i, j]
    return out_arr


def segment_softmax(const double[:, ::1] scores, const cnp.int64_t[::1] seg, Py_ssize_t n_seg):
    cdef Py_ssize_t e = scores.shape[0], h = scores.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((e, h), dtype=np.float64)
    cdef double[:, ::1] w = out
    cdef cnp.ndarray[double, ndim=2] mx_arr = np.full((n_seg, h), -INFINITY, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] sm_arr = np.zeros((n_seg, h), dtype=np.float64)
    cdef double[:, ::1] mx = mx_arr
    cdef double[:, ::1] sm = sm_arr
    cdef Py_ssize_t i, j, s
    cdef double v
    for i in range(e):
        s = seg[i]
        for j in range(h):
            if scores[i, j] > mx[s, j]:
                mx[s, j] = scores[i, j]
    for i in range(e):
        s = seg[i]
        for j in range(h):
            v = exp(scores[i, j] - mx[s, j])
            w[i, j] = v
            sm[s, j] += v
    for i in range(e):
        s = seg[i]
        for j in range(h):
            w[i, j] /= sm[s, j]
    return out


def segment_softmax_grad(const double[:, ::1] w, const double[:, ::1] gout, const cnp.int64_t[::1] seg, Py_ssize_t n_seg):
    # gin = w * (gout - segsum(w * gout))
    cdef Py_ssize_t e = w.shape[0], h = w.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((e, h), dtype=np.float64)
    cdef double[:, ::1] g = out
    cdef cnp.ndarray[double, ndim=2] dot_arr = np.zeros((n_seg, h), dtype=np.float64)
    cdef double[:, ::1] dot = dot_arr
    cdef Py_ssize_t i, j, s
    for i in range(e):
        s = seg[i]
        for j in range(h):
            dot[s, j] += w[i, j] * gout[i, j]
    for i in range(e):
        s = seg[i]
        for j in range(h):
            g[i, j] = w[i, j] * (gout[i, j] - dot[s, j])
    return out
