"""Pure numpy implementations of the convolution unfold/fold kernels."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride, padding):
    batch, channels, height, width = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (height + 2 * padding - k) // stride + 1
    ow = (width + 2 * padding - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: [B, C, oh, ow, k, k] -> [B, C, k, k, oh, ow]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(batch, channels * k * k, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def col2im(cols, x_shape, k, stride, padding):
    batch, channels, height, width = x_shape
    oh = (height + 2 * padding - k) // stride + 1
    ow = (width + 2 * padding - k) // stride + 1
    cols = cols.reshape(batch, channels, k, k, oh, ow)
    out = np.zeros((batch, channels, height + 2 * padding, width + 2 * padding), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(out)
