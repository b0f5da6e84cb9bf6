"""Kernel catalog: forward and reverse rules for every graph op.

Each kernel is a pair of functions::

    forward(*inputs, **params) -> (output, cache)
    backward(grad_out, inputs, output, cache, **params) -> tuple of input grads

Forwards must be pure apart from the documented batch-norm running-stat
update, and must preserve the input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError, ValueError):
    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


class UnknownKernelError(AutodiffError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0])


@dataclass(frozen=True)
class Kernel:
    kind: str
    forward: Callable
    backward: Callable


KERNELS: dict[str, Kernel] = {}


def register(kind: str, forward: Callable, backward: Callable) -> Kernel:
    kernel = Kernel(kind, forward, backward)
    KERNELS[kind] = kernel
    return kernel


def get_kernel(kind: str) -> Kernel:
    try:
        return KERNELS[kind]
    except KeyError:
        raise UnknownKernelError(f"unknown kernel kind {kind!r}") from None


def _expect_ndim(op, x, ndim, what="input"):
    if x.ndim != ndim:
        raise ShapeError(op, f"{what} must be {ndim}-D, got shape {x.shape}")


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(op, f"operand shapes differ: {a.shape} vs {b.shape}")


# -- elementwise ------------------------------------------------------------

def _add_fwd(a, b):
    _same_shape("add", a, b)
    return a + b, None


def _add_bwd(g, xs, out, cache):
    return g, g


def _mul_fwd(a, b):
    _same_shape("mul", a, b)
    return a * b, None


def _mul_bwd(g, xs, out, cache):
    a, b = xs
    return g * b, g * a


def _scale_fwd(x, factor):
    return x * x.dtype.type(factor), None


def _scale_bwd(g, xs, out, cache, factor):
    return (g * g.dtype.type(factor),)


def _relu_fwd(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False), None


def _relu_bwd(g, xs, out, cache):
    # relu'(0) = 0
    return (g * (xs[0] > 0),)


def _log_fwd(x):
    if np.any(x <= 0):
        raise ShapeError("log", "input must be strictly positive")
    return np.log(x), None


def _log_bwd(g, xs, out, cache):
    return (g / xs[0],)


def _exp_fwd(x):
    return np.exp(x), None


def _exp_bwd(g, xs, out, cache):
    return (g * out,)


register("add", _add_fwd, _add_bwd)
register("mul", _mul_fwd, _mul_bwd)
register("scale", _scale_fwd, _scale_bwd)
register("relu", _relu_fwd, _relu_bwd)
register("log", _log_fwd, _log_bwd)
register("exp", _exp_fwd, _exp_bwd)


# -- reductions -------------------------------------------------------------

def _sum_fwd(x, axis=None):
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise ShapeError("sum", f"axis {axis} out of range for shape {x.shape}")
    out = np.sum(x, axis=axis)
    return np.asarray(out, dtype=x.dtype).reshape(np.shape(out) or (1,)), None


def _sum_bwd(g, xs, out, cache, axis=None):
    x = xs[0]
    if axis is None:
        return (np.broadcast_to(g.reshape(()), x.shape).astype(x.dtype),)
    return (np.broadcast_to(np.expand_dims(g, axis), x.shape).astype(x.dtype),)


def _mean_fwd(x, axis=None):
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise ShapeError("mean", f"axis {axis} out of range for shape {x.shape}")
    out = np.mean(x, axis=axis)
    return np.asarray(out, dtype=x.dtype).reshape(np.shape(out) or (1,)), None


def _mean_bwd(g, xs, out, cache, axis=None):
    x = xs[0]
    count = x.size if axis is None else x.shape[axis]
    (gx,) = _sum_bwd(g, xs, out, cache, axis)
    return (gx / x.dtype.type(count),)


def _logsumexp_fwd(x, mask=None):
    """log sum_k mask_k exp(x_k) over the last axis."""
    if mask is not None and mask.shape != x.shape:
        raise ShapeError("logsumexp", f"mask shape {mask.shape} != input shape {x.shape}")
    keep = np.ones(x.shape, dtype=bool) if mask is None else mask.astype(bool)
    if not keep.any(axis=-1).all():
        raise ShapeError("logsumexp", "a row has no unmasked entries")
    xm = np.where(keep, x, -np.inf)
    m = np.max(xm, axis=-1, keepdims=True)
    e = np.where(keep, np.exp(x - m), 0).astype(x.dtype)
    s = e.sum(axis=-1, keepdims=True)
    out = (np.log(s) + m)[..., 0]
    return out.astype(x.dtype), e / s


def _logsumexp_bwd(g, xs, out, cache, mask=None):
    return (g[..., None] * cache,)


register("sum", _sum_fwd, _sum_bwd)
register("mean", _mean_fwd, _mean_bwd)
register("logsumexp", _logsumexp_fwd, _logsumexp_bwd)


# -- shape ------------------------------------------------------------------

def _reshape_fwd(x, shape):
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError("reshape", f"cannot reshape {x.shape} to {shape}")
    return x.reshape(shape), None


def _reshape_bwd(g, xs, out, cache, shape):
    return (g.reshape(xs[0].shape),)


def _take_rows_fwd(x, index):
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 1 or (index.size and (index.min() < 0 or index.max() >= x.shape[0])):
        raise ShapeError("take_rows", f"row index out of range for {x.shape[0]} rows")
    return x[index], None


def _take_rows_bwd(g, xs, out, cache, index):
    gx = np.zeros_like(xs[0])
    np.add.at(gx, np.asarray(index, dtype=np.intp), g)
    return (gx,)


def _subsample_pad_fwd(x, stride, channels):
    """Parameter-free shortcut: spatial stride then zero channel padding."""
    _expect_ndim("subsample_pad", x, 4)
    if channels < x.shape[1]:
        raise ShapeError("subsample_pad", f"cannot pad {x.shape[1]} channels down to {channels}")
    y = x[:, :, ::stride, ::stride]
    out = np.zeros((y.shape[0], channels) + y.shape[2:], dtype=x.dtype)
    out[:, : x.shape[1]] = y
    return out, None


def _subsample_pad_bwd(g, xs, out, cache, stride, channels):
    x = xs[0]
    gx = np.zeros_like(x)
    gx[:, :, ::stride, ::stride] = g[:, : x.shape[1]]
    return (gx,)


register("reshape", _reshape_fwd, _reshape_bwd)
register("take_rows", _take_rows_fwd, _take_rows_bwd)
register("subsample_pad", _subsample_pad_fwd, _subsample_pad_bwd)


# -- linear algebra ---------------------------------------------------------

def _matmul_fwd(a, b):
    _expect_ndim("matmul", a, 2, "left operand")
    _expect_ndim("matmul", b, 2, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"inner dims differ: {a.shape} @ {b.shape}")
    return a @ b, None


def _matmul_bwd(g, xs, out, cache):
    a, b = xs
    return g @ b.T, a.T @ g


def _dense_fwd(x, w, b=None):
    _expect_ndim("dense", x, 2)
    _expect_ndim("dense", w, 2, "weight")
    if x.shape[1] != w.shape[0]:
        raise ShapeError("dense", f"input features {x.shape[1]} != weight rows {w.shape[0]}")
    out = x @ w
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError("dense", f"bias shape {b.shape} != ({w.shape[1]},)")
        out = out + b
    return out, None


def _dense_bwd(g, xs, out, cache):
    x, w = xs[0], xs[1]
    grads = [g @ w.T, x.T @ g]
    if len(xs) == 3:
        grads.append(g.sum(axis=0))
    return tuple(grads)


def _l2n_fwd(x, eps=1e-12):
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    norm = np.maximum(norm, x.dtype.type(eps))
    return x / norm, norm


def _l2n_bwd(g, xs, out, norm, eps=1e-12):
    dot = np.sum(g * out, axis=-1, keepdims=True)
    return ((g - out * dot) / norm,)


def _cos_fwd(a, b, eps=1e-12):
    _expect_ndim("cosine_similarity", a, 2, "left operand")
    _expect_ndim("cosine_similarity", b, 2, "right operand")
    if a.shape[1] != b.shape[1]:
        raise ShapeError("cosine_similarity", f"feature dims differ: {a.shape} vs {b.shape}")
    an, na = _l2n_fwd(a, eps)
    bn, nb = _l2n_fwd(b, eps)
    return an @ bn.T, (an, na, bn, nb)


def _cos_bwd(g, xs, out, cache, eps=1e-12):
    an, na, bn, nb = cache
    (ga,) = _l2n_bwd(g @ bn, None, an, na)
    (gb,) = _l2n_bwd(g.T @ an, None, bn, nb)
    return ga, gb


register("matmul", _matmul_fwd, _matmul_bwd)
register("dense", _dense_fwd, _dense_bwd)
register("l2_normalize", _l2n_fwd, _l2n_bwd)
register("cosine_similarity", _cos_fwd, _cos_bwd)


# -- convolution and pooling -----------------------------------------------

def _conv_out(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _conv2d_fwd(x, w, b=None, stride=1, padding=0):
    _expect_ndim("conv2d", x, 4)
    _expect_ndim("conv2d", w, 4, "weight")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError("conv2d", f"input has {c} channels, weight expects {ci}")
    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", f"kernel {kh}x{kw} too large for input {h}x{wd} with padding {padding}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ w.reshape(o, -1).T
    if b is not None:
        if b.shape != (o,):
            raise ShapeError("conv2d", f"bias shape {b.shape} != ({o},)")
        out = out + b
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def _conv2d_bwd(g, xs, out, cols, stride=1, padding=0):
    x, w = xs[0], xs[1]
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
    gw = (g2.T @ cols).reshape(w.shape)
    gcols = (g2 @ w.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    gxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
    grads = [gx, gw]
    if len(xs) == 3:
        grads.append(g.sum(axis=(0, 2, 3)))
    return tuple(grads)


def _maxpool_fwd(x):
    _expect_ndim("max_pool2", x, 4)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError("max_pool2", f"spatial dims must be even, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(blocks, axis=-1)
    return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0], idx


def _maxpool_bwd(g, xs, out, idx):
    n, c, h, w = xs[0].shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
    np.put_along_axis(blocks, idx[..., None], g[..., None], axis=-1)
    gx = blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return (gx,)


def _gap_fwd(x):
    _expect_ndim("global_avg_pool", x, 4)
    return x.mean(axis=(2, 3)), None


def _gap_bwd(g, xs, out, cache):
    x = xs[0]
    hw = x.dtype.type(x.shape[2] * x.shape[3])
    return (np.broadcast_to((g / hw)[:, :, None, None], x.shape).copy(),)


register("conv2d", _conv2d_fwd, _conv2d_bwd)
register("max_pool2", _maxpool_fwd, _maxpool_bwd)
register("global_avg_pool", _gap_fwd, _gap_bwd)


# -- batch norm -------------------------------------------------------------

class BatchNormState:
    """Running statistics for one batch-norm layer.

    ``running_var`` holds the biased batch variance, so that with
    ``momentum=1`` eval mode reproduces train mode on the same batch.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batchnorm_eval(x, gamma, beta, mean, var, eps=1e-5):
    """Eval-mode batch norm on an NCHW array; usable outside any graph."""
    shape = (1, -1, 1, 1)
    inv = 1.0 / np.sqrt(var.astype(x.dtype) + x.dtype.type(eps))
    return (x - mean.astype(x.dtype).reshape(shape)) * (gamma * inv).reshape(shape) + beta.reshape(shape)


def _bn_fwd(x, gamma, beta, state, training=True, update=True):
    _expect_ndim("batch_norm2d", x, 4)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batch_norm2d", f"scale/shift must have shape ({c},), got {gamma.shape}/{beta.shape}")
    eps = x.dtype.type(state.eps)
    shape = (1, c, 1, 1)
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update:
            mom = state.momentum
            rm, rv = state.running_mean, state.running_var
            state.running_mean = ((1 - mom) * rm + mom * mean).astype(rm.dtype)
            state.running_var = ((1 - mom) * rv + mom * var).astype(rv.dtype)
    else:
        mean = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
    out = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return out.astype(x.dtype, copy=False), (xhat, inv)


def _bn_bwd(g, xs, out, cache, state, training=True, update=True):
    x, gamma, _ = xs
    xhat, inv = cache
    shape = (1, -1, 1, 1)
    ggamma = np.sum(g * xhat, axis=(0, 2, 3))
    gbeta = np.sum(g, axis=(0, 2, 3))
    gxhat = g * gamma.reshape(shape)
    if training:
        m = x.dtype.type(x.shape[0] * x.shape[2] * x.shape[3])
        gx = inv.reshape(shape) / m * (
            m * gxhat
            - gxhat.sum(axis=(0, 2, 3)).reshape(shape)
            - xhat * np.sum(gxhat * xhat, axis=(0, 2, 3)).reshape(shape))
    else:
        gx = gxhat * inv.reshape(shape)
    return gx.astype(x.dtype, copy=False), ggamma, gbeta


register("batch_norm2d", _bn_fwd, _bn_bwd)


# -- resampling -------------------------------------------------------------

def interp_matrix(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic (dst, src) matrix for half-pixel-centred linear interpolation."""
    mat = np.zeros((dst, src), dtype=dtype)
    if src == dst:
        np.fill_diagonal(mat, 1)
        return mat
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    rows = np.arange(dst)
    np.add.at(mat, (rows, lo), 1 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def bilinear_resize(x: np.ndarray, size) -> np.ndarray:
    """Resize the last two axes of ``x`` to ``size`` (h, w); identity when sizes match."""
    h, w = (size, size) if np.isscalar(size) else size
    if x.shape[-2:] == (h, w):
        return x.copy()
    ry = interp_matrix(x.shape[-2], h, x.dtype)
    rx = interp_matrix(x.shape[-1], w, x.dtype)
    return np.matmul(np.matmul(ry, x), rx.T)


def _resize_fwd(x, size):
    if x.ndim < 2:
        raise ShapeError("bilinear_resize", f"need at least 2 axes, got shape {x.shape}")
    h, w = (size, size) if np.isscalar(size) else size
    if h < 1 or w < 1:
        raise ShapeError("bilinear_resize", f"target size must be positive, got {h}x{w}")
    return bilinear_resize(x, (h, w)), None


def _resize_bwd(g, xs, out, cache, size):
    x = xs[0]
    if g.shape == x.shape:
        return (g.copy(),)
    ry = interp_matrix(x.shape[-2], g.shape[-2], g.dtype)
    rx = interp_matrix(x.shape[-1], g.shape[-1], g.dtype)
    return (np.matmul(np.matmul(ry.T, g), rx),)


register("bilinear_resize", _resize_fwd, _resize_bwd)
