"""numba-compiled kernels. Loop orders mirror the numpy path so the
floating-point accumulation order in ``col2im`` is identical."""
import math

import numba
import numpy as np

from . import _numpy

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327

njit = numba.njit(cache=True, nogil=True)


@njit
def _im2col(xp, k, stride, out_h, out_w):
    n_img, c_in, hp, wp = xp.shape
    t = np.empty((n_img, hp, wp, c_in), xp.dtype)
    for n in range(n_img):
        for c in range(c_in):
            for y in range(hp):
                for x in range(wp):
                    t[n, y, x, c] = xp[n, c, y, x]
    cols = np.empty((n_img * out_h * out_w, k * k * c_in), xp.dtype)
    for n in range(n_img):
        for i in range(out_h):
            for j in range(out_w):
                r = (n * out_h + i) * out_w + j
                for ky in range(k):
                    for kx in range(k):
                        base = (ky * k + kx) * c_in
                        for c in range(c_in):
                            cols[r, base + c] = t[n, i * stride + ky, j * stride + kx, c]
    return cols


@njit
def _col2im(cols, n_img, c_in, hp, wp, k, stride, out_h, out_w):
    t = np.zeros((n_img, hp, wp, c_in), cols.dtype)
    for n in range(n_img):
        for ky in range(k):
            for kx in range(k):
                base = (ky * k + kx) * c_in
                for i in range(out_h):
                    for j in range(out_w):
                        r = (n * out_h + i) * out_w + j
                        for c in range(c_in):
                            t[n, i * stride + ky, j * stride + kx, c] += cols[r, base + c]
    out = np.empty((n_img, c_in, hp, wp), cols.dtype)
    for n in range(n_img):
        for c in range(c_in):
            for y in range(hp):
                for x in range(wp):
                    out[n, c, y, x] = t[n, y, x, c]
    return out


@njit
def _gelu(flat, out):
    for i in range(flat.size):
        v = flat[i]
        out[i] = 0.5 * v * (1.0 + math.erf(v * _INV_SQRT2))


@njit
def _gelu_grad(flat, out):
    for i in range(flat.size):
        v = flat[i]
        cdf = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        out[i] = cdf + v * _INV_SQRT_2PI * math.exp(-0.5 * v * v)


@njit
def _salt_pepper(flat, r1, r2, p, out):
    for i in range(flat.size):
        if r1[i] < p:
            out[i] = 0 if r2[i] < 0.5 else 255
        else:
            out[i] = flat[i]


# Above this many column entries the numpy strided copy beats the compiled
# gather (measured in benchmarks/bench_kernels.py); results are identical.
IM2COL_NUMPY_ABOVE = 1 << 20


def im2col(xp, k, stride, out_h, out_w):
    n, c = xp.shape[:2]
    if n * out_h * out_w * k * k * c > IM2COL_NUMPY_ABOVE:
        return _numpy.im2col(xp, k, stride, out_h, out_w)
    return _im2col(np.ascontiguousarray(xp), k, stride, out_h, out_w)


def col2im(cols, padded_shape, k, stride, out_h, out_w):
    n, c, hp, wp = padded_shape
    return _col2im(np.ascontiguousarray(cols), n, c, hp, wp, k, stride, out_h, out_w)


def gelu(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    _gelu(x.reshape(-1), out.reshape(-1))
    return out


def gelu_grad(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    _gelu_grad(x.reshape(-1), out.reshape(-1))
    return out


def salt_pepper(samples, r1, r2, p):
    samples = np.ascontiguousarray(samples)
    out = np.empty_like(samples)
    _salt_pepper(samples.reshape(-1), r1.reshape(-1), r2.reshape(-1), float(p), out.reshape(-1))
    return out
