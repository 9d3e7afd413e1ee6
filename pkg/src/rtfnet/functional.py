"""Differentiable operators on :class:`~rtfnet.tensor.Tensor`.

Convolution is cross-correlation with zero padding. Activations are laid
out ``N x C x H x W``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import Tensor, make_result

BN_EPS = 1e-5
LN_EPS = 1e-5
BN_MOMENTUM = 0.1

# cache im2col columns for backward only below this many elements, else recompute
_COLS_CACHE_LIMIT = 1 << 22
# target number of score elements materialised per attention chunk
_ATTN_CHUNK = 1 << 16


def _check_rank(x: Tensor, rank: int, what: str) -> None:
    if x.ndim != rank:
        raise ValueError(f"{what} expects a rank-{rank} tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    _check_rank(x, 4, "conv2d input")
    _check_rank(weight, 4, "conv2d weight")
    n, c, h, w = x.shape
    c_out, c_in, k, k2 = weight.shape
    if c != c_in:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {c_in}")
    if k != k2:
        raise ValueError(f"conv2d needs a square kernel, got {k}x{k2}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    span_h, span_w = h + 2 * padding - k, w + 2 * padding - k
    if span_h < 0 or span_w < 0:
        raise ValueError(f"kernel {k}x{k} does not fit padded input {h + 2 * padding}x{w + 2 * padding}")
    if span_h % stride or span_w % stride:
        raise ValueError("conv2d output extent is not integral for this stride")
    out_h, out_w = span_h // stride + 1, span_w // stride + 1

    xd = x.data
    pointwise = k == 1 and stride == 1 and padding == 0
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd

    def columns():
        if pointwise:
            return np.ascontiguousarray(xp.transpose(0, 2, 3, 1)).reshape(-1, c)
        return kernels.im2col(xp, k, stride, out_h, out_w)

    cols = columns()
    w2 = weight.data.transpose(0, 2, 3, 1).reshape(c_out, -1)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    y = np.ascontiguousarray(out.reshape(n, out_h, out_w, c_out).transpose(0, 3, 1, 2))

    saved = cols if cols.size <= _COLS_CACHE_LIMIT else None
    del cols, xd
    wshape = weight.shape
    need_x, need_w = x.requires_grad, weight.requires_grad
    need_b = bias is not None and bias.requires_grad

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, c_out)
        gx = gw = gb = None
        if need_w:
            cols_ = saved if saved is not None else columns()
            gw = (gm.T @ cols_).reshape(c_out, k, k, c_in).transpose(0, 3, 1, 2)
            gw = np.ascontiguousarray(gw).reshape(wshape)
        if need_b:
            gb = gm.sum(axis=0)
        if need_x:
            gcols = gm @ w2
            if pointwise:
                gx = np.ascontiguousarray(gcols.reshape(n, h, w, c).transpose(0, 3, 1, 2))
            else:
                gxp = kernels.col2im(gcols, xp.shape, k, stride, out_h, out_w)
                gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw, gb

    return make_result("conv2d", y, (x, weight, bias), bw)


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result("relu", np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    return make_result("gelu", kernels.gelu(xd), (x,), lambda g: (g * kernels.gelu_grad(xd),))


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# normalization


@dataclass
class BatchNormStats:
    """Running statistics of one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    count: int = 0

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BatchNormStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), 0)


def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    stats: BatchNormStats | None = None,
    training: bool = True,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    _check_rank(x, 4, "batch_norm input")
    xd = x.data
    bshape = (1, -1, 1, 1)
    gamma = scale.data.reshape(bshape)
    axes = (0, 2, 3)
    m = xd.size // xd.shape[1]

    if training:
        mean = xd.mean(axis=axes, keepdims=True)
        xc = xd - mean
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        if stats is not None:
            unbiased = var * (m / (m - 1)) if m > 1 else var
            stats.mean[...] = (1 - momentum) * stats.mean + momentum * mean.reshape(-1)
            stats.var[...] = (1 - momentum) * stats.var + momentum * unbiased.reshape(-1)
            stats.count += 1
    else:
        if stats is None or stats.count == 0:
            raise RuntimeError("batch_norm eval mode needs accumulated running statistics")
        inv = 1.0 / np.sqrt(stats.var.reshape(bshape) + eps)
        xhat = (xd - stats.mean.reshape(bshape)) * inv
    y = xhat * gamma + shift.data.reshape(bshape)
    need_x, need_scale, need_shift = x.requires_grad, scale.requires_grad, shift.requires_grad

    def bw(g):
        gscale = (g * xhat).sum(axis=axes) if need_scale else None
        gshift = g.sum(axis=axes) if need_shift else None
        gx = None
        if need_x:
            dxhat = g * gamma
            if training:
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                gx = (inv / m) * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv
        return gx, gscale, gshift

    return make_result("batch_norm", y.astype(xd.dtype, copy=False), (x, scale, shift), bw)


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over the channel axis (axis 1) independently at every other index."""
    xd = x.data
    c = xd.shape[1]
    bshape = (1, c) + (1,) * (xd.ndim - 2)
    red = tuple(i for i in range(xd.ndim) if i != 1)
    gamma = scale.data.reshape(bshape)
    mean = xd.mean(axis=1, keepdims=True)
    xc = xd - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma + shift.data.reshape(bshape)
    need_x, need_scale, need_shift = x.requires_grad, scale.requires_grad, shift.requires_grad

    def bw(g):
        gscale = (g * xhat).sum(axis=red) if need_scale else None
        gshift = g.sum(axis=red) if need_shift else None
        gx = None
        if need_x:
            dxhat = g * gamma
            s1 = dxhat.sum(axis=1, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=1, keepdims=True)
            gx = (inv / c) * (c * dxhat - s1 - xhat * s2)
        return gx, gscale, gshift

    return make_result("layer_norm", y.astype(xd.dtype, copy=False), (x, scale, shift), bw)


def normalize(
    kind: str,
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_stats: BatchNormStats | None = None,
    mode: str = "train",
) -> Tensor:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if kind == "batch":
        return batch_norm(x, scale, shift, running_stats, training=mode == "train")
    if kind == "layer":
        return layer_norm(x, scale, shift)
    raise ValueError(f"unknown normalization {kind!r}")


# ---------------------------------------------------------------------------
# matrix products and attention


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product. Leading extents must be equal, or one side is 2-D."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul batch extents differ: {a.shape[:-2]} vs {b.shape[:-2]}")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def bw(g):
        ga = gb = None
        if need_a:
            ga = g @ np.swapaxes(bd, -1, -2)
            if ad.ndim == 2 and ga.ndim > 2:
                ga = ga.reshape(-1, *ga.shape[-2:]).sum(axis=0)
        if need_b:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return make_result("matmul", ad @ bd, (a, b), bw)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    xd = x.data
    e = np.exp(xd - xd.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    return make_result("softmax", y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def _attn_probs(q, k, scale):
    s = (q @ np.swapaxes(k, -1, -2)) * scale
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    return s


def _attn_chunks(groups: int, rows: int, keys: int):
    per_group = rows * keys
    if per_group <= _ATTN_CHUNK:
        gstep = max(1, _ATTN_CHUNK // per_group)
        for g0 in range(0, groups, gstep):
            yield slice(g0, min(groups, g0 + gstep)), slice(0, rows)
    else:
        rstep = max(1, _ATTN_CHUNK // keys)
        for g0 in range(groups):
            for r0 in range(0, rows, rstep):
                yield slice(g0, g0 + 1), slice(r0, min(rows, r0 + rstep))


def attention_weights(q: Tensor, k: Tensor) -> np.ndarray:
    """softmax(q kᵀ / sqrt(d)) as a plain array (inspection only, not taped)."""
    return _attn_probs(q.data, k.data, 1.0 / math.sqrt(q.shape[-1]))


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v over the last two axes.

    Fused and chunked: the score matrix is never stored whole, and the
    backward pass recomputes each chunk of attention weights.
    """
    if q.shape[:-2] != k.shape[:-2] or k.shape[:-1] != v.shape[:-1] or q.shape[-1] != k.shape[-1]:
        raise ValueError(f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape}")
    lead = q.shape[:-2]
    n_q, d = q.shape[-2:]
    n_k, d_v = v.shape[-2:]
    qd = q.data.reshape(-1, n_q, d)
    kd = k.data.reshape(-1, n_k, d)
    vd = v.data.reshape(-1, n_k, d_v)
    groups = qd.shape[0]
    scale = 1.0 / math.sqrt(d)

    out = np.empty((groups, n_q, d_v), dtype=qd.dtype)
    for gs, rs in _attn_chunks(groups, n_q, n_k):
        out[gs, rs] = _attn_probs(qd[gs, rs], kd[gs], scale) @ vd[gs]

    def bw(g):
        go = g.reshape(groups, n_q, d_v)
        dq = np.empty_like(qd)
        dk = np.zeros_like(kd)
        dv = np.zeros_like(vd)
        delta = (go * out).sum(axis=-1, keepdims=True)
        for gs, rs in _attn_chunks(groups, n_q, n_k):
            p = _attn_probs(qd[gs, rs], kd[gs], scale)
            dv[gs] += np.swapaxes(p, -1, -2) @ go[gs, rs]
            dp = go[gs, rs] @ np.swapaxes(vd[gs], -1, -2)
            ds = p * (dp - delta[gs, rs])
            ds *= scale
            dq[gs, rs] = ds @ kd[gs]
            dk[gs] += np.swapaxes(ds, -1, -2) @ qd[gs, rs]
        return dq.reshape(q.shape), dk.reshape(k.shape), dv.reshape(v.shape)

    return make_result("attention", out.reshape(*lead, n_q, d_v), (q, k, v), bw)


# ---------------------------------------------------------------------------
# pixel (un)shuffle


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """``out[n, c*r*r + dy*r + dx, i, j] = x[n, c, i*r + dy, j*r + dx]``."""
    _check_rank(x, 4, "pixel_unshuffle input")
    n, c, h, w = x.shape
    if r < 1 or h % r or w % r:
        raise ValueError(f"spatial extents {h}x{w} are not divisible by {r}")
    y = x.data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    y = np.ascontiguousarray(y).reshape(n, c * r * r, h // r, w // r)

    def bw(g):
        gx = g.reshape(n, c, r, r, h // r, w // r).transpose(0, 1, 4, 2, 5, 3)
        return (np.ascontiguousarray(gx).reshape(n, c, h, w),)

    return make_result("pixel_unshuffle", y, (x,), bw)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_unshuffle`."""
    _check_rank(x, 4, "pixel_shuffle input")
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ValueError(f"channel count {c} is not divisible by {r}x{r}")
    co = c // (r * r)
    y = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    y = np.ascontiguousarray(y).reshape(n, co, h * r, w * r)

    def bw(g):
        gx = g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
        return (np.ascontiguousarray(gx).reshape(n, c, h, w),)

    return make_result("pixel_shuffle", y, (x,), bw)


# ---------------------------------------------------------------------------
# spatial padding / cropping and loss


def _reflect_index(n: int, pad: int) -> np.ndarray:
    if pad > n - 1:
        raise ValueError(f"reflection pad {pad} needs an extent > {pad}, got {n}")
    return np.concatenate([np.arange(n), n - 2 - np.arange(pad)])


def pad_reflect(x: Tensor, bottom: int, right: int) -> Tensor:
    """Reflect-pad the last two axes at the bottom/right edge (edge sample not repeated)."""
    h, w = x.shape[-2:]
    ih, iw = _reflect_index(h, bottom), _reflect_index(w, right)
    y = x.data[..., ih, :][..., iw]

    def bw(g):
        gh = np.zeros(g.shape[:-2] + (h, g.shape[-1]), dtype=g.dtype)
        np.add.at(gh, (..., ih, slice(None)), g)
        gx = np.zeros(g.shape[:-2] + (h, w), dtype=g.dtype)
        np.add.at(gx, (..., iw), gh)
        return (gx,)

    return make_result("pad_reflect", np.ascontiguousarray(y), (x,), bw)


def crop(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left ``h x w`` window of the last two axes."""
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[..., :h, :w] = g
        return (gx,)

    return make_result("crop", np.ascontiguousarray(x.data[..., :h, :w]), (x,), bw)


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    val = np.asarray(np.mean(diff * diff), dtype=diff.dtype).reshape(())
    need_a, need_b = a.requires_grad, b.requires_grad

    def bw(g):
        gd = diff * (2.0 * g / n)
        return (gd if need_a else None), (-gd if need_b else None)

    return make_result("mse", val, (a, b), bw)
