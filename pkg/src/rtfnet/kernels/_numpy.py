"""Pure-numpy kernels (reference path)."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def im2col(xp, k, stride, out_h, out_w):
    n, c = xp.shape[:2]
    t = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    win = sliding_window_view(t, (k, k), axis=(1, 2))
    win = win[:, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n * out_h * out_w, k * k * c)


def col2im(cols, padded_shape, k, stride, out_h, out_w):
    n, c, hp, wp = padded_shape
    v = cols.reshape(n, out_h, out_w, k, k, c)
    t = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            t[:, ky : ky + stride * out_h : stride, kx : kx + stride * out_w : stride, :] += v[
                :, :, :, ky, kx, :
            ]
    return np.ascontiguousarray(t.transpose(0, 3, 1, 2))


def gelu(x):
    return (0.5 * x * (1.0 + erf(x * _INV_SQRT2))).astype(x.dtype, copy=False)


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (cdf + x * pdf).astype(x.dtype, copy=False)


def salt_pepper(samples, r1, r2, p):
    out = samples.copy()
    hit = r1 < p
    out[hit & (r2 < 0.5)] = 0
    out[hit & (r2 >= 0.5)] = 255
    return out
