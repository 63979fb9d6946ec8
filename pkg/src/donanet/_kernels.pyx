# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: im2col / col2im and 2x2 max pooling.

Same contracts as ``donanet._kernels_py``; float32 and float64 inputs.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col(floating[:, :, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t ho = (hp - k) // stride + 1
    cdef Py_ssize_t wo = (wp - k) // stride + 1
    cdef Py_ssize_t plane = ho * wo
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((c * k * k, n * plane), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t ci, ki, kj, b, oh, ow, row, col0, ih
    with nogil:
        for ci in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ci * k + ki) * k + kj
                    for b in range(n):
                        col0 = b * plane
                        for oh in range(ho):
                            ih = oh * stride + ki
                            for ow in range(wo):
                                out[row, col0 + oh * wo + ow] = xp[b, ci, ih, ow * stride + kj]
    return out_arr


def col2im(floating[:, ::1] cols, tuple shape, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = shape[0], c = shape[1], hp = shape[2], wp = shape[3]
    cdef Py_ssize_t ho = (hp - k) // stride + 1
    cdef Py_ssize_t wo = (wp - k) // stride + 1
    cdef Py_ssize_t plane = ho * wo
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ci, ki, kj, b, oh, ow, row, col0, ih
    with nogil:
        for ci in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ci * k + ki) * k + kj
                    for b in range(n):
                        col0 = b * plane
                        for oh in range(ho):
                            ih = oh * stride + ki
                            for ow in range(wo):
                                out[b, ci, ih, ow * stride + kj] += cols[row, col0 + oh * wo + ow]
    return out_arr


def maxpool2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, c, ho, wo), dtype=dtype)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.int8)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef signed char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ci, i, j
    cdef floating best, v
    cdef signed char arg
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = x[b, ci, 2 * i, 2 * j]
                        arg = 0
                        v = x[b, ci, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            arg = 1
                        v = x[b, ci, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            arg = 2
                        v = x[b, ci, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            arg = 3
                        out[b, ci, i, j] = best
                        idx[b, ci, i, j] = arg
    return out_arr, idx_arr


def maxpool2_backward(floating[:, :, :, ::1] grad, signed char[:, :, :, ::1] idx, tuple shape):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], ho = grad.shape[2], wo = grad.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros(shape, dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ci, i, j
    cdef signed char a
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        a = idx[b, ci, i, j]
                        out[b, ci, 2 * i + (a >> 1), 2 * j + (a & 1)] = grad[b, ci, i, j]
    return out_arr
