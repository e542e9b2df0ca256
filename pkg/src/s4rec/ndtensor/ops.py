"""Differentiable kernels.

Every function takes and returns :class:`Tensor`. Broadcasting is limited to
leading-axis expansion: the second operand's shape must equal a suffix of the
first operand's shape.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .tensor import ShapeError, as_tensor, make_node

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _check_suffix(kernel, a, b):
    if a.shape[a.ndim - b.ndim:] != b.shape or b.ndim > a.ndim:
        raise ShapeError(f"{kernel}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.reshape(-1, *shape).sum(axis=0, dtype=np.float64).astype(g.dtype)
    return g


def _sum64(x, axis=None, keepdims=False):
    return np.sum(x, axis=axis, dtype=np.float64, keepdims=keepdims).astype(x.dtype)


# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < b.ndim:
        a, b = b, a
    _check_suffix("add", a, b)
    bshape = b.shape

    def back(g):
        return g, _unbroadcast(g, bshape)
    return make_node(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("sub", a, b)
    bshape = b.shape

    def back(g):
        return g, -_unbroadcast(g, bshape)
    return make_node(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < b.ndim:
        a, b = b, a
    _check_suffix("mul", a, b)
    av, bv = a.data, b.data

    def back(g):
        return g * bv, _unbroadcast(g * av, bv.shape)
    return make_node(av * bv, (a, b), back)


def scale(a, c):
    c = float(c)

    def back(g):
        return (g * np.asarray(c, dtype=g.dtype),)
    return make_node(a.data * np.asarray(c, dtype=a.dtype), (a,), back)


def exp(a):
    out = np.exp(a.data)

    def back(g):
        return (g * out,)
    return make_node(out, (a,), back)


def log(a):
    x = a.data

    def back(g):
        return (g / x,)
    return make_node(np.log(x), (a,), back)


def relu(a):
    x = a.data
    keep = x > 0

    def back(g):
        return (g * keep,)
    return make_node(np.where(keep, x, 0).astype(x.dtype), (a,), back)


def gelu(a):
    """Exact (erf) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    out = (x * cdf).astype(x.dtype)

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return ((g * (cdf + x * pdf)).astype(x.dtype),)
    return make_node(out, (a,), back)


def grad_reverse(x, lam):
    """Identity forward; backward scales the upstream gradient by ``-lam``."""
    lam = float(lam)
    if lam < 0:
        raise ValueError(f"grad_reverse: lambda must be >= 0, got {lam}")
    factor = -lam

    def back(g):
        return (g * np.asarray(factor, dtype=g.dtype),)
    return make_node(x.data.copy(), (x,), back)


def dropout(x, p, rng, training=True):
    if not training or p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError("dropout: p must be < 1")
    keep = rng.random(x.shape) >= p
    mult = (keep / (1.0 - p)).astype(x.dtype)

    def back(g):
        return (g * mult,)
    return make_node(x.data * mult, (x,), back)


# shape manipulation

def reshape(a, shape):
    old = a.shape

    def back(g):
        return (g.reshape(old),)
    return make_node(a.data.reshape(shape), (a,), back)


def transpose(a, axes):
    inverse = np.argsort(axes)

    def back(g):
        return (g.transpose(inverse),)
    return make_node(a.data.transpose(axes), (a,), back)


def _is_basic(key):
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (slice, int, type(Ellipsis), type(None))) for p in parts)


def getitem(a, key):
    shape, dtype = a.shape, a.dtype
    basic = _is_basic(key)

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        if basic:
            out[key] = g
        else:
            np.add.at(out, key, g)
        return (out,)
    return make_node(a.data[key], (a,), back)


def concat(tensors, axis=0):
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))
    return make_node(np.concatenate([t.data for t in tensors], axis=axis),
                     tuple(tensors), back)


def embedding(table, ids):
    """Row gather ``table[ids]``; gradients scatter-add back into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table {table.shape}")
    shape = table.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)
    return make_node(table.data[ids], (table,), back)


# linear algebra

def matmul(a, b):
    """``a @ b`` for ``a`` of shape (..., m, k) and ``b`` either (k, n) or
    with the same leading axes as ``a``."""
    av, bv = a.data, b.data
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2] or (
            bv.ndim > 2 and av.shape[:-2] != bv.shape[:-2]):
        raise ShapeError(f"matmul: shape mismatch {av.shape} vs {bv.shape}")
    shared_weight = bv.ndim == 2

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        if shared_weight:
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(av, -1, -2) @ g
        return ga, gb
    return make_node(av @ bv, (a, b), back)


# reductions

def reduce_sum(a, axis=None, keepdims=False):
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)
    return make_node(_sum64(a.data, axis, keepdims), (a,), back)


def reduce_mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(reduce_sum(a, axis, keepdims), 1.0 / float(n))


# normalisations

def softmax(a, axis=-1):
    x = a.data
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    out = z / _sum64(z, axis, keepdims=True)

    def back(g):
        return (out * (g - _sum64(g * out, axis, keepdims=True)),)
    return make_node(out, (a,), back)


def log_softmax(a, axis=-1):
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(_sum64(np.exp(shifted), axis, keepdims=True))
    out = shifted - lse

    def back(g):
        return (g - np.exp(out) * _sum64(g, axis, keepdims=True),)
    return make_node(out, (a,), back)


def layernorm(x, gain, bias, eps=1e-12):
    """Normalise over the last axis, then ``* gain + bias``."""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layernorm: shape mismatch {x.shape} vs {gain.shape}")
    xv = x.data
    d = xv.shape[-1]
    mu = _sum64(xv, -1, keepdims=True) / d
    xc = xv - mu
    var = _sum64(xc * xc, -1, keepdims=True) / d
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xv.dtype))
    xhat = xc * inv
    gv = gain.data

    def back(g):
        gx = g * gv
        gxhat_mean = _sum64(gx, -1, keepdims=True) / d
        proj = _sum64(gx * xhat, -1, keepdims=True) / d
        dx = inv * (gx - gxhat_mean - xhat * proj)
        dgain = _unbroadcast(g * xhat, gv.shape)
        dbias = _unbroadcast(g, gv.shape)
        return dx, dgain, dbias
    return make_node(xhat * gv + bias.data, (x, gain, bias), back)


def l2_normalize(a, axis=-1, floor=1e-12):
    """Unit-norm rows; rows with norm below ``floor`` become zeros with zero gradient."""
    x = a.data
    norm = np.sqrt(_sum64(x * x, axis, keepdims=True))
    live = norm >= floor
    safe = np.where(live, norm, 1.0)
    out = np.where(live, x / safe, 0.0).astype(x.dtype)

    def back(g):
        dot = _sum64(g * out, axis, keepdims=True)
        return (np.where(live, (g - out * dot) / safe, 0.0).astype(x.dtype),)
    return make_node(out, (a,), back)


# attention

def causal_masked_attention(q, k, v, key_valid):
    """Scaled dot-product attention over (B, h, L, dh) inputs.

    ``key_valid`` is a (B, L) boolean array; a query at position t attends to
    valid keys at positions <= t. Queries with no admissible key output zeros.
    """
    qv, kv, vv = q.data, k.data, v.data
    if not (qv.shape == kv.shape == vv.shape) or qv.ndim != 4:
        raise ShapeError(f"causal_masked_attention: shape mismatch {qv.shape}, {kv.shape}, {vv.shape}")
    B, h, L, dh = qv.shape
    if key_valid.shape != (B, L):
        raise ShapeError(f"causal_masked_attention: mask {key_valid.shape} vs {(B, L)}")
    scale_ = np.asarray(1.0 / math.sqrt(dh), dtype=qv.dtype)
    allowed = np.tril(np.ones((L, L), dtype=bool))[None, None] & key_valid[:, None, None, :]
    scores = (qv @ np.swapaxes(kv, -1, -2)) * scale_
    scores = np.where(allowed, scores, -np.inf)
    row_max = scores.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.exp(scores - row_max)
    denom = _sum64(e, -1, keepdims=True)
    probs = np.where(denom > 0, e / np.where(denom > 0, denom, 1.0), 0.0).astype(qv.dtype)
    out = probs @ vv

    def back(g):
        dv = np.swapaxes(probs, -1, -2) @ g
        dp = g @ np.swapaxes(vv, -1, -2)
        ds = probs * (dp - _sum64(dp * probs, -1, keepdims=True)) * scale_
        dq = ds @ kv
        dk = np.swapaxes(ds, -1, -2) @ qv
        return dq, dk, dv
    node = make_node(out, (q, k, v), back)
    return node, probs


# fused losses

def cross_entropy(logits, targets):
    """Mean over rows of ``-log softmax(logits)[target]`` for 2-D logits."""
    x = logits.data
    targets = np.asarray(targets)
    n = x.shape[0]
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(_sum64(np.exp(shifted), 1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    loss = -_sum64(logp[rows, targets]) / n

    def back(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (g / n),)
    return make_node(np.asarray(loss, dtype=x.dtype), (logits,), back)


def soft_cross_entropy(logits, target_probs, row_weights=None):
    """``sum_i w_i * CE(target_i, softmax(logits_i))``; default weights 1/n.

    ``target_probs`` is a constant array (no gradient).
    """
    x = logits.data
    t = np.asarray(target_probs, dtype=x.dtype)
    n = x.shape[0]
    w = np.full(n, 1.0 / n, dtype=x.dtype) if row_weights is None else np.asarray(row_weights, dtype=x.dtype)
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(_sum64(np.exp(shifted), 1, keepdims=True))
    logp = shifted - lse
    per_row = -_sum64(t * logp, 1)
    loss = _sum64(per_row * w)
    tmass = _sum64(t, 1, keepdims=True)

    def back(g):
        return ((np.exp(logp) * tmass - t) * (w[:, None] * g),)
    return make_node(np.asarray(loss, dtype=x.dtype), (logits,), back)


def tied_softmax_xent(hidden, table, targets, lo, hi, chunk=2048):
    """Next-item cross-entropy with output scores tied to ``table[lo:hi]``.

    ``hidden`` is (N, d), ``targets`` holds row indices into ``table`` within
    [lo, hi). The loss is the mean over the N rows. Logits are materialised
    ``chunk`` rows at a time to bound memory.
    """
    hv, tv = hidden.data, table.data
    targets = np.asarray(targets)
    n = hv.shape[0]
    if n == 0:
        raise ShapeError("tied_softmax_xent: no target positions")
    if hv.shape[1] != tv.shape[1]:
        raise ShapeError(f"tied_softmax_xent: shape mismatch {hv.shape} vs {tv.shape}")
    if targets.min() < lo or targets.max() >= hi:
        raise ShapeError("tied_softmax_xent: target outside scored range")
    W = tv[lo:hi]
    local = targets - lo
    total = 0.0
    lses = np.empty(n, dtype=np.float64)
    for s in range(0, n, chunk):
        logits = hv[s:s + chunk] @ W.T
        m = logits.max(axis=1, keepdims=True)
        lse = (m[:, 0] + np.log(np.sum(np.exp(logits - m), axis=1, dtype=np.float64))).astype(np.float64)
        lses[s:s + chunk] = lse
        picked = logits[np.arange(logits.shape[0]), local[s:s + chunk]]
        total += float(np.sum(lse - picked, dtype=np.float64))
    loss = np.asarray(total / n, dtype=hv.dtype)

    def back(g):
        g = float(g) / n
        dh = np.empty_like(hv)
        dW = np.zeros_like(W)
        for s in range(0, n, chunk):
            h = hv[s:s + chunk]
            logits = h @ W.T
            p = np.exp(logits - lses[s:s + chunk, None]).astype(hv.dtype)
            p[np.arange(p.shape[0]), local[s:s + chunk]] -= 1.0
            p *= np.asarray(g, dtype=hv.dtype)
            dh[s:s + chunk] = p @ W
            dW += p.T @ h
        dtable = np.zeros_like(tv)
        dtable[lo:hi] = dW
        return dh, dtable
    return make_node(loss, (hidden, table), back)
