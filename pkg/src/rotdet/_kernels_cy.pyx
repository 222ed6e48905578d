# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution and pooling kernels.

The patch gather/scatter (im2col / col2im) and the pooling loops are the
hot spots; the dense multiplies still go through BLAS via numpy.
"""
import numpy as np
cimport cython
cimport numpy as cnp

cnp.import_array()

NAME = "cython"

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _out_side(Py_ssize_t side, Py_ssize_t k, Py_ssize_t s) noexcept nogil:
    return (side - k) // s + 1


cdef void _im2col_fill(real[:, :, :, ::1] x, real[:, ::1] cols,
                       Py_ssize_t k, Py_ssize_t s) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = _out_side(h, k, s), ow = _out_side(w, k, s)
    cdef Py_ssize_t i, ci, oy, ox, ky, kx, row, col
    for i in range(n):
        for oy in range(oh):
            for ox in range(ow):
                row = (i * oh + oy) * ow + ox
                col = 0
                for ci in range(c):
                    for ky in range(k):
                        for kx in range(k):
                            cols[row, col] = x[i, ci, oy * s + ky, ox * s + kx]
                            col += 1


cdef void _col2im_add(real[:, ::1] cols, real[:, :, :, ::1] gin,
                      Py_ssize_t k, Py_ssize_t s) noexcept nogil:
    cdef Py_ssize_t n = gin.shape[0], c = gin.shape[1], h = gin.shape[2], w = gin.shape[3]
    cdef Py_ssize_t oh = _out_side(h, k, s), ow = _out_side(w, k, s)
    cdef Py_ssize_t i, ci, oy, ox, ky, kx, row, col
    for i in range(n):
        for oy in range(oh):
            for ox in range(ow):
                row = (i * oh + oy) * ow + ox
                col = 0
                for ci in range(c):
                    for ky in range(k):
                        for kx in range(k):
                            gin[i, ci, oy * s + ky, ox * s + kx] += cols[row, col]
                            col += 1


def _im2col(real[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t s):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = _out_side(h, k, s), ow = _out_side(w, k, s)
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.empty((n * oh * ow, c * k * k), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    _im2col_fill(x, cols, k, s)
    return cols_arr


def conv2d_forward(x, w, b, int s):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t oc = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t oh = _out_side(h, k, s), ow = _out_side(wd, k, s)
    cols = _im2col(x, k, s)
    y = cols @ w.reshape(oc, -1).T
    y += b
    return np.ascontiguousarray(y.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, int s, gout):
    cdef Py_ssize_t oc = w.shape[0], k = w.shape[2], c = x.shape[1]
    g2 = np.ascontiguousarray(gout.transpose(0, 2, 3, 1)).reshape(-1, oc)
    cols = _im2col(x, k, s)
    gw = (g2.T @ cols).reshape(w.shape)
    gb = g2.sum(axis=0)
    gcols = np.ascontiguousarray(g2 @ w.reshape(oc, -1))
    gin = np.zeros_like(x)
    cdef float[:, ::1] gc_f
    cdef float[:, :, :, ::1] gin_f
    cdef double[:, ::1] gc_d
    cdef double[:, :, :, ::1] gin_d
    if x.dtype == np.float32:
        gc_f = gcols
        gin_f = gin
        _col2im_add(gc_f, gin_f, k, s)
    else:
        gc_d = gcols
        gin_d = gin
        _col2im_add(gc_d, gin_d, k, s)
    return gin, gw, gb


def _maxpool_fwd(real[:, :, :, ::1] x, real[:, :, :, ::1] y,
                 cnp.int32_t[:, :, :, ::1] idx, Py_ssize_t k, Py_ssize_t s):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t i, ci, oy, ox, ky, kx, best
    cdef real v, bv
    with nogil:
        for i in range(n):
            for ci in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        best = 0
                        bv = x[i, ci, oy * s, ox * s]
                        for ky in range(k):
                            for kx in range(k):
                                v = x[i, ci, oy * s + ky, ox * s + kx]
                                if v > bv:
                                    bv = v
                                    best = ky * k + kx
                        y[i, ci, oy, ox] = bv
                        idx[i, ci, oy, ox] = <cnp.int32_t> best


def maxpool_forward(x, int k, int s):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = _out_side(h, k, s), ow = _out_side(w, k, s)
    y = np.empty((n, c, oh, ow), dtype=x.dtype)
    idx = np.empty((n, c, oh, ow), dtype=np.int32)
    _maxpool_fwd(x, y, idx, k, s)
    return y, idx


def _maxpool_bwd(real[:, :, :, ::1] gout, cnp.int32_t[:, :, :, ::1] idx,
                 real[:, :, :, ::1] gin, Py_ssize_t k, Py_ssize_t s):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1]
    cdef Py_ssize_t oh = gout.shape[2], ow = gout.shape[3]
    cdef Py_ssize_t i, ci, oy, ox, o
    with nogil:
        for i in range(n):
            for ci in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        o = idx[i, ci, oy, ox]
                        gin[i, ci, oy * s + o // k, ox * s + o % k] += gout[i, ci, oy, ox]


def maxpool_backward(gout, idx, x_shape, int k, int s):
    gin = np.zeros(x_shape, dtype=gout.dtype)
    _maxpool_bwd(gout, idx, gin, k, s)
    return gin
