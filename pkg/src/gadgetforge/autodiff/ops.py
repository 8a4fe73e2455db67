"""Differentiable primitives.

Every op computes its forward value with numpy and registers a closure that
maps the output gradient to input gradients. Binary elementwise ops follow
numpy broadcasting; gradients are summed back to the input shapes.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import InvalidProbability, ShapeMismatch
from . import kernels
from .tensor import DTYPE, Tensor, as_tensor, make_op

BCE_EPS = 1e-7
_bce_clamp_events = 0


def bce_clamp_events() -> int:
    """Number of probabilities clamped by :func:`bce_loss` since import (or last reset)."""
    return _bce_clamp_events


def reset_bce_clamp_events() -> None:
    global _bce_clamp_events
    _bce_clamp_events = 0


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# ------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op("add", (a, b), a.data + b.data, bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_op("sub", (a, b), a.data - b.data, bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op("mul", (a, b), a.data * b.data, bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)

    def bw(g):
        return (g * y * (1.0 - y),)

    return make_op("sigmoid", (a,), y, bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - y * y),)

    return make_op("tanh", (a,), y, bw)


def softmax(a, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis; ``mask`` (1 keep / 0 drop) zeroes dropped entries exactly."""
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return make_op("softmax", (a,), y, bw)


# ----------------------------------------------------------------- linear


def matmul(a, b) -> Tensor:
    """(m,k)@(k,n), or batched (B,m,k)@(k,n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim not in (1, 2, 3) or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    y = a.data @ b.data

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return make_op("matmul", (a, b), y, bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in ts]}") from exc
    ax = axis % y.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        out = []
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            out.append(g[tuple(idx)] if t.requires_grad else None)
        return tuple(out)

    return make_op("concat", ts, y, bw)


def slice_(a, key) -> Tensor:
    a = as_tensor(a)
    y = a.data[key]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return make_op("slice", (a,), np.array(y, dtype=DTYPE), bw)


def gather(table, ids) -> Tensor:
    """Row lookup ``table[ids]`` (embedding lookup); ``ids`` is an integer array."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or ids.ndim > 2:
        raise ShapeMismatch(f"gather: table {table.shape}, ids {ids.shape}")
    y = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return make_op("gather", (table,), y, bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    y = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.shape),)

    return make_op("reshape", (a,), y, bw)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return make_op("transpose", (a,), np.transpose(a.data, axes), bw)


def pad_axis(a, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad one axis."""
    a = as_tensor(a)
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    y = np.pad(a.data, widths)
    n = a.shape[axis]

    def bw(g):
        idx = [slice(None)] * g.ndim
        idx[axis] = slice(before, before + n)
        return (g[tuple(idx)],)

    return make_op("pad", (a,), y, bw)


# ------------------------------------------------------------- reductions


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    y = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op("reduce_sum", (a,), np.asarray(y, dtype=DTYPE), bw)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    y = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod([a.shape[x] for x in np.atleast_1d(axis)])

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_op("reduce_mean", (a,), np.asarray(y, dtype=DTYPE), bw)


# ------------------------------------------------------------ convolution


def conv1d(x, w) -> Tensor:
    """Same-padded stride-1 convolution without bias.

    ``x``: (B, T, C_in) or (T, C_in); ``w``: (K, C_in, C_out) with odd K.
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if w.ndim != 3 or xd.ndim != 3 or xd.shape[2] != w.shape[1]:
        raise ShapeMismatch(f"conv1d: input {x.shape}, kernel {w.shape}")
    k, cin, cout = w.shape
    if k % 2 != 1:
        raise ShapeMismatch(f"conv1d: kernel width {k} must be odd for same padding")
    bsz, t, _ = xd.shape
    cols = kernels.im2col(np.ascontiguousarray(xd), k)  # (B, T, K*C_in)
    w2 = w.data.reshape(k * cin, cout)
    y = (cols.reshape(bsz * t, k * cin) @ w2).reshape(bsz, t, cout)

    def bw(g):
        g3 = g[None] if squeeze else g
        g2 = g3.reshape(bsz * t, cout)
        gw = (cols.reshape(bsz * t, k * cin).T @ g2).reshape(k, cin, cout) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ w2.T).reshape(bsz, t, k * cin)
            gx = kernels.col2im(np.ascontiguousarray(dcols), k, cin)
            if squeeze:
                gx = gx[0]
        return gx, gw

    return make_op("conv1d", (x, w), y[0] if squeeze else y, bw)


# ------------------------------------------------------------ stochastic


def dropout(a, rate: float, rng: Optional[np.random.Generator] = None, train: bool = True) -> Tensor:
    """Inverted dropout: keep with prob 1-rate and scale by 1/(1-rate); identity in eval mode."""
    a = as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return a
    rng = rng if rng is not None else np.random.default_rng()
    mask = (rng.random(a.shape) >= rate).astype(DTYPE) / (1.0 - rate)

    def bw(g):
        return (g * mask,)

    return make_op("dropout", (a,), a.data * mask, bw, saved=mask)


# ------------------------------------------------------------------ loss


def bce_loss(p, y) -> Tensor:
    """Mean binary cross-entropy of probabilities ``p`` against targets ``y``.

    Probabilities are clamped to [1e-7, 1 - 1e-7]; clamped entries get zero
    gradient and are tallied in :func:`bce_clamp_events`.
    """
    global _bce_clamp_events
    p = as_tensor(p)
    yd = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=DTYPE)
    if yd.shape != p.shape:
        raise ShapeMismatch(f"bce_loss: predictions {p.shape} vs targets {yd.shape}")
    if not np.all((p.data >= 0.0) & (p.data <= 1.0)):
        raise InvalidProbability("bce_loss expects probabilities in [0, 1]")
    if not np.all((yd >= 0.0) & (yd <= 1.0)):
        raise InvalidProbability("bce_loss targets must lie in [0, 1]")
    pc = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    clamped = pc != p.data
    _bce_clamp_events += int(clamped.sum())
    n = p.data.size
    loss = -np.sum(yd * np.log(pc) + (1.0 - yd) * np.log1p(-pc)) / n

    def bw(g):
        dp = -(yd / pc - (1.0 - yd) / (1.0 - pc)) / n
        dp[clamped] = 0.0
        return (g * dp,)

    return make_op("bce_loss", (p,), np.asarray(loss, dtype=DTYPE), bw)
