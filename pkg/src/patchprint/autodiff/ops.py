"""Differentiable operations.

Each op computes its forward value with numpy and hands a closure to
:func:`make_result` that maps the output gradient to input gradients.
Layouts follow the usual conventions: images are N x C x H x W, conv weights
Cout x Cin x kh x kw, transposed-conv weights Cin x Cout x kh x kw, linear
weights out x in.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeMismatchError
from .tensor import Tensor, make_result

BCE_EPS = 1e-7


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)
    return make_result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)
    return make_result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    da, db = a.data, b.data

    def bw(g):
        return _unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)
    return make_result(da * db, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    da, db = a.data, b.data

    def bw(g):
        ga = g / db
        return _unbroadcast(ga, da.shape), _unbroadcast(-ga * da / db, db.shape)
    return make_result(da / db, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return make_result(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return make_result(np.log(x), (a,), lambda g: (g / x,))


def abs(a: Tensor) -> Tensor:  # noqa: A001
    sign = np.sign(a.data)
    return make_result(np.abs(a.data), (a,), lambda g: (g * sign,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # Split by sign so exp never overflows.
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_result(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return make_result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


# --- reductions and shape --------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return make_result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    n = a.data.size // max(out.size, 1)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)
    return make_result(out, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))
    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


# --- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul {a.shape} @ {b.shape}")

    da, db = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(db, -1, -2)
        gb = np.swapaxes(da, -1, -2) @ g
        return _unbroadcast(ga, da.shape), _unbroadcast(gb, db.shape)
    return make_result(da @ db, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weight.shape[1]:
        raise ShapeMismatchError(f"linear input {x.shape} vs weight {weight.shape}")
    dx, dw = x.data, weight.data
    y = dx @ dw.T
    if bias is not None:
        y = y + bias.data
    has_bias = bias is not None

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ dw
        gw = g2.T @ dx.reshape(-1, dx.shape[-1])
        return (gx, gw, g2.sum(axis=0)) if has_bias else (gx, gw)
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y, inputs, bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return make_result(y, (a,), bw)


def cross_attention(query: Tensor, context: Tensor, wq: Tensor, wk: Tensor,
                    wv: Tensor) -> Tensor:
    """softmax((query Wq)(context Wk)^T / sqrt(d)) (context Wv).

    query is (..., T, d) and context (..., S, d); leading dims broadcast.
    """
    d = query.shape[-1]
    if context.shape[-1] != d or wq.shape != (d, d) or wk.shape != (d, d) or wv.shape != (d, d):
        raise ShapeMismatchError(
            f"cross_attention query {query.shape}, context {context.shape}, "
            f"projections {wq.shape}/{wk.shape}/{wv.shape}")
    q = matmul(query, wq)
    k = matmul(context, wk)
    v = matmul(context, wv)
    scores = mul(matmul(q, transpose(k, _swap_last(k.ndim))), 1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


# --- convolution and pooling ----------------------------------------------

def _columns(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # (Cin*kh*kw) x (N*Ho*Wo) column matrix, row order (c, i, j) to match the weight.
    n, c = xp.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] \
                .transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding (no kernel flip)."""
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if cin != c:
        raise ShapeMismatchError(f"conv2d input has {c} channels, weight expects {cin}")
    if stride < 1 or h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeMismatchError(f"kernel {kh}x{kw} does not fit padded input {h}x{w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    ho, wo = (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1
    wmat = weight.data.reshape(cout, -1)
    out = (wmat @ _columns(xp, kh, kw, stride, ho, wo)).reshape(cout, n, ho, wo)
    if bias is not None:
        out += bias.data[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    has_bias, want_gx = bias is not None, x.requires_grad
    pshape = xp.shape

    def bw(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
        gw = (gmat @ _columns(xp, kh, kw, stride, ho, wo).T).reshape(weight_shape)
        gx = None
        if want_gx:
            gcols = (wmat.T @ gmat).reshape(c, kh, kw, n, ho, wo)
            gxp = np.zeros((c, n) + pshape[2:], dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
            gx = gxp.transpose(1, 0, 2, 3)
            gx = np.ascontiguousarray(gx[:, :, pad:pad + h, pad:pad + w] if pad else gx)
        if has_bias:
            return gx, gw, gmat.sum(axis=1)
        return gx, gw
    weight_shape = weight.shape
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, bw)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 2) -> Tensor:
    """Adjoint of a strided, unpadded conv2d; weight is Cin x Cout x kh x kw."""
    n, c, h, w = x.shape
    cin, cout, kh, kw = weight.shape
    if cin != c:
        raise ShapeMismatchError(f"conv_transpose2d input has {c} channels, weight expects {cin}")
    ho, wo = (h - 1) * stride + kh, (w - 1) * stride + kw
    dx, wd = x.data, weight.data
    cols = np.tensordot(dx, wd, axes=((1,), (0,)))  # N, H, W, Cout, kh, kw
    out = np.zeros((n, cout, ho, wo), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * h:stride, j:j + stride * w:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    del cols
    if bias is not None:
        out += bias.data[:, None, None]
    has_bias = bias is not None

    def bw(g):
        gathered = np.stack([np.stack([g[:, :, i:i + stride * h:stride, j:j + stride * w:stride]
                                       for j in range(kw)], axis=-1)
                             for i in range(kh)], axis=-2)  # N, Cout, H, W, kh, kw
        gx = np.tensordot(gathered, wd, axes=((1, 4, 5), (1, 2, 3))).transpose(0, 3, 1, 2)
        gw = np.tensordot(dx, gathered, axes=((0, 2, 3), (0, 2, 3)))  # Cin, Cout, kh, kw
        if has_bias:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, bw)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/cols are dropped.

    Ties route the gradient to the first maximal element in row-major order.
    """
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    quads = [x.data[:, :, i:2 * h2:2, j:2 * w2:2] for i in (0, 1) for j in (0, 1)]
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    arg = np.full(out.shape, 3, dtype=np.uint8)
    for k in (2, 1, 0):
        arg[quads[k] == out] = k
    del quads
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape, dtype=g.dtype)
        for k, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            gx[:, :, i:2 * h2:2, j:2 * w2:2] = np.where(arg == k, g, 0)
        return (gx,)
    return make_result(out, (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """N x C x H x W -> N x C."""
    hw = x.shape[2] * x.shape[3]
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / hw, shape).copy(),)
    return make_result(x.data.mean(axis=(2, 3)), (x,), bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N,) or (N, H, W).

    In training mode the batch statistics normalize the input and the running
    buffers are updated in place (exponential moving average, unbiased
    variance). In inference mode the op is the affine map given by the
    running statistics.
    """
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    m = x.data.size // x.shape[1]
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    gam = gamma.data.reshape(shape)
    out = xhat * gam + beta.data.reshape(shape)

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gam
        if training:
            gx = (inv.reshape(shape) / m) * (
                m * gxhat - gxhat.sum(axis=axes).reshape(shape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(shape))
        else:
            gx = gxhat * inv.reshape(shape)
        return gx, gg, gb
    return make_result(out, (x, gamma, beta), bw)


# --- losses ----------------------------------------------------------------

def bce_loss(pred: Tensor, label) -> Tensor:
    """Mean of -[y log p + (1 - y) log(1 - p)], p clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(label.data if isinstance(label, Tensor) else label, dtype=pred.dtype)
    y = np.broadcast_to(y, pred.shape)
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    inside = (pred.data >= BCE_EPS) & (pred.data <= 1.0 - BCE_EPS)

    def bw(g):
        return (g * inside * (p - y) / (p * (1.0 - p)) / n,)
    return make_result(np.asarray(loss, dtype=pred.dtype), (pred,), bw)


def mse_loss(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mse_loss shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def bw(g):
        ga = g * 2.0 * diff / n
        return ga, -ga
    return make_result(np.asarray(np.mean(diff * diff), dtype=a.dtype), (a, b), bw)
