"""Differentiable operators over :class:`~kmerspace.autodiff.tensor.Tensor`.

Every op computes its forward value eagerly and registers an exact
vector-Jacobian product for each input that needs a gradient.  Shapes follow
the (batch, length, channels) layout for sequence ops.
"""

import math

import numpy as np

from .tensor import Tensor, lift, make_node
from .. import _kernels


class ShapeError(ValueError):
    pass


def _check(cond, op, *shapes):
    if not cond:
        raise ShapeError(f"{op}: incompatible shapes {[tuple(s) for s in shapes]}")


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = lift(a), lift(b)
    out = a.data + b.data
    return make_node(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def sub(a, b):
    a, b = lift(a), lift(b)
    out = a.data - b.data
    return make_node(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ])


def neg(a):
    a = lift(a)
    return make_node(-a.data, [(a, lambda g: -g)])


def mul(a, b):
    a, b = lift(a), lift(b)
    out = a.data * b.data
    return make_node(out, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def exp(a):
    a = lift(a)
    out = np.exp(a.data)
    return make_node(out, [(a, lambda g: g * out)])


def log(a):
    a = lift(a)
    return make_node(np.log(a.data), [(a, lambda g: g / a.data)])


def matmul(a, b):
    a, b = lift(a), lift(b)
    _check(a.data.ndim >= 2 and b.data.ndim >= 2 and a.data.shape[-1] == b.data.shape[-2],
           "matmul", a.data.shape, b.data.shape)
    out = a.data @ b.data

    def ga(g):
        return _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)

    def gb(g):
        return _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)

    return make_node(out, [(a, ga), (b, gb)])


def sum_(a, axis=None, keepdims=False):
    a = lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def ga(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return np.broadcast_to(g, a.data.shape).copy()

    return make_node(out, [(a, ga)])


def mean_(a, axis=None, keepdims=False):
    a = lift(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in
                                                  (axis if isinstance(axis, tuple) else (axis,))])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape):
    a = lift(a)
    return make_node(a.data.reshape(shape), [(a, lambda g: g.reshape(a.data.shape))])


def transpose(a, axes):
    a = lift(a)
    inv = np.argsort(axes)
    return make_node(a.data.transpose(axes), [(a, lambda g: g.transpose(inv))])


def concat(tensors, axis=0):
    ts = [lift(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            return g[tuple(sl)]
        return vjp

    return make_node(out, [(t, make_vjp(i)) for i, t in enumerate(ts)])


def slice_axis(a, axis, start, stop):
    a = lift(a)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def ga(g):
        dx = np.zeros_like(a.data)
        dx[sl] = g
        return dx

    return make_node(a.data[sl], [(a, ga)])


def masked_fill(a, mask, value):
    """Replace entries where mask is False by `value` (mask is a constant)."""
    a = lift(a)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, a.data.dtype.type(value))
    return make_node(out, [(a, lambda g: np.where(mask, g, 0.0))])


# ---------------------------------------------------------------------------
# neural-net layers
# ---------------------------------------------------------------------------

def dense(x, w, b=None):
    """x (..., in) @ w (in, out) + b."""
    x, w = lift(x), lift(w)
    _check(x.data.shape[-1] == w.data.shape[0], "dense", x.data.shape, w.data.shape)
    out = x.data @ w.data
    if b is not None:
        b = lift(b)
        out = out + b.data

    def gx(g):
        return g @ w.data.T

    def gw(g):
        return x.data.reshape(-1, x.data.shape[-1]).T @ g.reshape(-1, g.shape[-1])

    links = [(x, gx), (w, gw)]
    if b is not None:
        links.append((b, lambda g: g.reshape(-1, g.shape[-1]).sum(axis=0)))
    return make_node(out, links)


def conv1d(x, w, b=None, stride=1, padding="same"):
    """1-d cross-correlation: x (B, L, Cin), w (K, Cin, Cout).

    "same" keeps the length (stride 1 only); "valid" shrinks it.
    """
    x, w = lift(x), lift(w)
    _check(x.data.ndim == 3 and w.data.ndim == 3 and x.data.shape[2] == w.data.shape[1],
           "conv1d", x.data.shape, w.data.shape)
    kw = w.data.shape[0]
    if padding == "same":
        if stride != 1:
            raise ValueError("conv1d: padding='same' requires stride 1")
        left = (kw - 1) // 2
        right = kw - 1 - left
    elif padding == "valid":
        left = right = 0
    else:
        raise ValueError(f"conv1d: unknown padding {padding!r}")
    if left or right:
        xp = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    else:
        xp = x.data
    lpad = xp.shape[1]
    _check(lpad >= kw, "conv1d", x.data.shape, w.data.shape)
    out = _kernels.conv1d_forward(xp, w.data, stride)
    if b is not None:
        b = lift(b)
        out = out + b.data

    def gx(g):
        dxp = _kernels.conv1d_grad_input(np.ascontiguousarray(g), w.data, stride, lpad)
        if left or right:
            return dxp[:, left:lpad - right, :]
        return dxp

    def gw(g):
        return _kernels.conv1d_grad_weight(xp, np.ascontiguousarray(g), stride, kw)

    links = [(x, gx), (w, gw)]
    if b is not None:
        links.append((b, lambda g: g.sum(axis=(0, 1))))
    return make_node(out, links)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    x, gamma, beta = lift(x), lift(gamma), lift(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    n = x.data.shape[-1]

    def gx(g):
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)

    def ggamma(g):
        return _unbroadcast(g * xhat, gamma.data.shape)

    def gbeta(g):
        return _unbroadcast(g, beta.data.shape)

    del n
    return make_node(out, [(x, gx), (gamma, ggamma), (beta, gbeta)])


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """tanh-approximation GeLU; gelu(0) = 0, gelu'(0) = 0.5."""
    x = lift(x)
    v = x.data
    v2 = v * v
    t = np.tanh(_GELU_C * (v + 0.044715 * (v2 * v)))
    out = 0.5 * v * (1.0 + t)

    def gx(g):
        du = _GELU_C * (1.0 + 0.134145 * v2)
        return g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)

    return make_node(out, [(x, gx)])


def silu(x):
    x = lift(x)
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * sig
    return make_node(out, [(x, lambda g: g * (sig * (1.0 + x.data * (1.0 - sig))))])


def softmax(x, axis=-1):
    """Max-shifted softmax; rows of exact -inf logits get exact-zero weight."""
    x = lift(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def gx(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return make_node(y, [(x, gx)])


def avg_pool1d(x, kernel=2, stride=2):
    """Average pooling over axis 1, ceil semantics with right zero-padding."""
    x = lift(x)
    _check(x.data.ndim == 3, "avg_pool1d", x.data.shape)
    b, ln, c = x.data.shape
    _check(ln >= 1, "avg_pool1d", x.data.shape)
    lout = max(0, -(-(ln - kernel) // stride)) + 1
    lpad = (lout - 1) * stride + kernel
    xp = np.pad(x.data, ((0, 0), (0, lpad - ln), (0, 0))) if lpad > ln else x.data
    hi = (lout - 1) * stride + 1
    out = xp[:, 0:hi:stride, :].copy()
    for t in range(1, kernel):
        out += xp[:, t:t + hi:stride, :]
    out /= kernel

    def gx(g):
        dxp = np.zeros((b, lpad, c), dtype=g.dtype)
        gk = g / kernel
        for t in range(kernel):
            dxp[:, t:t + hi:stride, :] += gk
        return dxp[:, :ln, :]

    return make_node(out, [(x, gx)])


def global_avg_pool(x):
    """Mean over the length axis: (B, L, C) -> (B, C)."""
    x = lift(x)
    _check(x.data.ndim == 3, "global_avg_pool", x.data.shape)
    ln = x.data.shape[1]
    out = x.data.mean(axis=1)
    return make_node(out, [(x, lambda g: np.broadcast_to(g[:, None, :] / ln, x.data.shape).copy())])


def l2_normalize(x, axis=-1, eps=1e-12):
    """x / sqrt(max(sum(x^2), eps)) along `axis`."""
    x = lift(x)
    ss = (x.data ** 2).sum(axis=axis, keepdims=True)
    clamped = ss < eps
    denom = np.sqrt(np.maximum(ss, eps))
    y = x.data / denom

    def gx(g):
        dot = (g * x.data).sum(axis=axis, keepdims=True)
        full = g / denom - x.data * (dot / (denom ** 3))
        return np.where(clamped, g / denom, full)

    return make_node(y, [(x, gx)])


def embedding_lookup(table, ids):
    """Row gather: table (V, D), ids int array -> (ids.shape..., D)."""
    table = lift(table)
    ids = np.asarray(ids)

    def gt(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return dt

    return make_node(table.data[ids], [(table, gt)])


def causal_mha(x, wq, bq, wk, bk, wv, bv, wo, bo, num_heads, mask):
    """Multi-head self-attention with an arbitrary boolean attention mask.

    mask (T, T): True where query position p may attend key position q.
    Disallowed scores are overwritten with -inf before the softmax, so masked
    positions carry exactly zero weight and causality holds bitwise.
    """
    x = lift(x)
    bsz, t, d = x.data.shape
    _check(d % num_heads == 0, "causal_mha", x.data.shape)
    hd = d // num_heads

    def split(z):
        return transpose(reshape(z, (bsz, t, num_heads, hd)), (0, 2, 1, 3))

    q = split(dense(x, wq, bq))
    k = split(dense(x, wk, bk))
    v = split(dense(x, wv, bv))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    scores = masked_fill(scores, np.asarray(mask, bool)[None, None], -np.inf)
    attn = softmax(scores, axis=-1)
    out = matmul(attn, v)
    out = reshape(transpose(out, (0, 2, 1, 3)), (bsz, t, d))
    return dense(out, wo, bo)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def cross_entropy(probs, targets):
    """Mean of -log p[target] over all leading positions of `probs`.

    probs: (..., C) rows of probabilities (e.g. softmax output);
    targets: integer array of shape probs.shape[:-1].
    """
    probs = lift(probs)
    targets = np.asarray(targets)
    _check(targets.shape == probs.data.shape[:-1], "cross_entropy",
           probs.data.shape, targets.shape)
    idx = np.expand_dims(targets, -1)
    picked = np.take_along_axis(probs.data, idx, axis=-1)
    safe = np.maximum(picked, 1e-12)
    n = max(1, targets.size)
    out = -np.log(safe).sum() / n

    def gp(g):
        dp = np.zeros_like(probs.data)
        np.put_along_axis(dp, idx, -g / (n * safe), axis=-1)
        return dp

    return make_node(np.asarray(out, dtype=probs.data.dtype), [(probs, gp)])


def mse(pred, target):
    """Mean squared error, scalar."""
    pred, target = lift(pred), lift(target)
    _check(pred.data.shape == target.data.shape, "mse", pred.data.shape, target.data.shape)
    diff = pred.data - target.data
    n = max(1, diff.size)
    out = np.asarray((diff ** 2).sum() / n, dtype=pred.data.dtype)
    return make_node(out, [
        (pred, lambda g: g * 2.0 * diff / n),
        (target, lambda g: -g * 2.0 * diff / n),
    ])
