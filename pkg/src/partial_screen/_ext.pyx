# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution unfold/fold kernels (same contract as _kernels_py)."""

import numpy as np

ctypedef fused real_t:
    float
    double


cdef void _im2col(const real_t[:, :, :, ::1] x, real_t[:, :, ::1] out,
                  Py_ssize_t k, Py_ssize_t stride, Py_ssize_t padding,
                  Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t b, c, i, j, oy, ox, iy, ix, row
    for b in range(B):
        for c in range(C):
            for i in range(k):
                for j in range(k):
                    row = (c * k + i) * k + j
                    for oy in range(oh):
                        iy = oy * stride + i - padding
                        if iy < 0 or iy >= H:
                            continue
                        for ox in range(ow):
                            ix = ox * stride + j - padding
                            if 0 <= ix < W:
                                out[b, row, oy * ow + ox] = x[b, c, iy, ix]


cdef void _col2im(const real_t[:, :, ::1] cols, real_t[:, :, :, ::1] out,
                  Py_ssize_t k, Py_ssize_t stride, Py_ssize_t padding,
                  Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    cdef Py_ssize_t B = out.shape[0], C = out.shape[1], H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t b, c, i, j, oy, ox, iy, ix, row
    for b in range(B):
        for c in range(C):
            for i in range(k):
                for j in range(k):
                    row = (c * k + i) * k + j
                    for oy in range(oh):
                        iy = oy * stride + i - padding
                        if iy < 0 or iy >= H:
                            continue
                        for ox in range(ow):
                            ix = ox * stride + j - padding
                            if 0 <= ix < W:
                                out[b, c, iy, ix] += cols[b, row, oy * ow + ox]


def im2col(x, int k, int stride, int padding):
    x = np.ascontiguousarray(x)
    if x.dtype != np.float32:
        x = x.astype(np.float64, copy=False)
    B, C, H, W = x.shape
    oh = (H + 2 * padding - k) // stride + 1
    ow = (W + 2 * padding - k) // stride + 1
    out = np.zeros((B, C * k * k, oh * ow), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col[float](x, out, k, stride, padding, oh, ow)
    else:
        _im2col[double](x, out, k, stride, padding, oh, ow)
    return out, oh, ow


def col2im(cols, x_shape, int k, int stride, int padding):
    cols = np.ascontiguousarray(cols)
    if cols.dtype != np.float32:
        cols = cols.astype(np.float64, copy=False)
    B, C, H, W = x_shape
    oh = (H + 2 * padding - k) // stride + 1
    ow = (W + 2 * padding - k) // stride + 1
    out = np.zeros((B, C, H, W), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, out, k, stride, padding, oh, ow)
    else:
        _col2im[double](cols, out, k, stride, padding, oh, ow)
    return out
