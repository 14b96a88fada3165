# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col(floating[:, :, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride,
           Py_ssize_t dilation, Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t b = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t n = b * ho * wo
    dtype = np.float64 if floating is double else np.float32
    out = np.empty((c * k * k, n), dtype=dtype)
    cdef floating[:, ::1] cols = out
    cdef Py_ssize_t ci, ki, kj, bi, oh, ow, row, col, r
    with nogil:
        for ci in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ci * k + ki) * k + kj
                    col = 0
                    for bi in range(b):
                        for oh in range(ho):
                            r = oh * stride + ki * dilation
                            for ow in range(wo):
                                cols[row, col] = xp[bi, ci, r, ow * stride + kj * dilation]
                                col += 1
    return out


def col2im(floating[:, ::1] cols, Py_ssize_t b, Py_ssize_t c, Py_ssize_t hp,
           Py_ssize_t wp, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t dilation,
           Py_ssize_t ho, Py_ssize_t wo):
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((b, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] xp = out
    cdef Py_ssize_t ci, ki, kj, bi, oh, ow, row, col, r
    with nogil:
        for ci in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ci * k + ki) * k + kj
                    col = 0
                    for bi in range(b):
                        for oh in range(ho):
                            r = oh * stride + ki * dilation
                            for ow in range(wo):
                                xp[bi, ci, r, ow * stride + kj * dilation] += cols[row, col]
                                col += 1
    return out


def maxpool_forward(floating[:, :, :, ::1] x, Py_ssize_t window, Py_ssize_t stride):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - window) // stride + 1
    cdef Py_ssize_t wo = (w - window) // stride + 1
    dtype = np.float64 if floating is double else np.float32
    out_arr = np.empty((b, c, ho, wo), dtype=dtype)
    arg_arr = np.empty((b, c, ho, wo), dtype=np.int64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t bi, ci, oh, ow, ki, kj, best_t
    cdef floating best, v
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for oh in range(ho):
                    for ow in range(wo):
                        best = x[bi, ci, oh * stride, ow * stride]
                        best_t = 0
                        for ki in range(window):
                            for kj in range(window):
                                v = x[bi, ci, oh * stride + ki, ow * stride + kj]
                                if v > best:
                                    best = v
                                    best_t = ki * window + kj
                        out[bi, ci, oh, ow] = best
                        arg[bi, ci, oh, ow] = best_t
    return out_arr, arg_arr


def maxpool_backward(floating[:, :, :, ::1] grad, cnp.int64_t[:, :, :, ::1] arg,
                     in_shape, Py_ssize_t window, Py_ssize_t stride):
    dtype = np.float64 if floating is double else np.float32
    dx_arr = np.zeros(tuple(in_shape), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b = grad.shape[0], c = grad.shape[1]
    cdef Py_ssize_t ho = grad.shape[2], wo = grad.shape[3]
    cdef Py_ssize_t bi, ci, oh, ow, t
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for oh in range(ho):
                    for ow in range(wo):
                        t = arg[bi, ci, oh, ow]
                        dx[bi, ci, oh * stride + t // window, ow * stride + t % window] += grad[bi, ci, oh, ow]
    return dx_arr


def avgpool_forward(floating[:, :, :, ::1] x, Py_ssize_t window, Py_ssize_t stride):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - window) // stride + 1
    cdef Py_ssize_t wo = (w - window) // stride + 1
    dtype = np.float64 if floating is double else np.float32
    out_arr = np.empty((b, c, ho, wo), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, oh, ow, ki, kj
    cdef floating acc
    cdef floating area = window * window
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for oh in range(ho):
                    for ow in range(wo):
                        acc = 0
                        for ki in range(window):
                            for kj in range(window):
                                acc = acc + x[bi, ci, oh * stride + ki, ow * stride + kj]
                        out[bi, ci, oh, ow] = acc / area
    return out_arr


def avgpool_backward(floating[:, :, :, ::1] grad, in_shape, Py_ssize_t window,
                     Py_ssize_t stride):
    dtype = np.float64 if floating is double else np.float32
    dx_arr = np.zeros(tuple(in_shape), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b = grad.shape[0], c = grad.shape[1]
    cdef Py_ssize_t ho = grad.shape[2], wo = grad.shape[3]
    cdef Py_ssize_t bi, ci, oh, ow, ki, kj
    cdef floating share
    cdef floating area = window * window
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for oh in range(ho):
                    for ow in range(wo):
                        share = grad[bi, ci, oh, ow] / area
                        for ki in range(window):
                            for kj in range(window):
                                dx[bi, ci, oh * stride + ki, ow * stride + kj] += share
    return dx_arr
