# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel core: RBF gram matrices, their input gradients, and
pairwise distances. Single pass over each pair, no temporaries."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def sq_dist_matrix(double[:, ::1] x, double[:, ::1] y):
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = x[i, k] - y[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out_arr


def rbf_gram(double[:, ::1] x, double[:, ::1] y, double lengthscale):
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    cdef double scale = -0.5 / (lengthscale * lengthscale)
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = x[i, k] - y[j, k]
                acc += diff * diff
            out[i, j] = exp(acc * scale)
    return out_arr


def rbf_gram_grad_x(double[:, ::1] x, double[:, ::1] y, double lengthscale,
                    double[:, ::1] gram, double[:, ::1] weight):
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double wk
    cdef double inv_ell2 = 1.0 / (lengthscale * lengthscale)
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(m):
            wk = weight[i, j] * gram[i, j] * inv_ell2
            for k in range(d):
                out[i, k] += wk * (y[j, k] - x[i, k])
    return out_arr


def condensed_dists(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j, k, pos = 0
    cdef double acc, diff
    out_arr = np.empty(n * (n - 1) // 2, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                diff = x[i, k] - x[j, k]
                acc += diff * diff
            out[pos] = sqrt(acc)
            pos += 1
    return out_arr
