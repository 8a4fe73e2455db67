"""Peephole LSTM over whole sequences as a single tape op.

Gate layout along the last axis is [i, f, o, g]. Peepholes read the previous
cell state for all three sigmoid gates:

    i, f, o = sigmoid(x W + h U + p * c_prev + b)
    g       = tanh(x W + h U + b)
    c       = f * c_prev + i * g
    h       = o * tanh(c)
"""
from __future__ import annotations

import math

import numpy as np

from .._accel import njit, select
from ..autodiff.tensor import Tensor, as_tensor, make_op
from ..errors import ShapeMismatch


@njit
def _forward_nb(xw, u, p):
    b, t, h4 = xw.shape
    h = h4 // 4
    hs = np.zeros((b, t, h))
    cs = np.zeros((b, t, h))
    gates = np.empty((b, t, h4))
    h_prev = np.zeros((b, h))
    c_prev = np.zeros((b, h))
    for s in range(t):
        z = np.dot(h_prev, u)
        for i in range(b):
            for j in range(h):
                cp = c_prev[i, j]
                zi = xw[i, s, j] + z[i, j] + p[0, j] * cp
                zf = xw[i, s, h + j] + z[i, h + j] + p[1, j] * cp
                zo = xw[i, s, 2 * h + j] + z[i, 2 * h + j] + p[2, j] * cp
                zg = xw[i, s, 3 * h + j] + z[i, 3 * h + j]
                ig = 1.0 / (1.0 + math.exp(-zi))
                fg = 1.0 / (1.0 + math.exp(-zf))
                og = 1.0 / (1.0 + math.exp(-zo))
                gg = math.tanh(zg)
                c = fg * cp + ig * gg
                hv = og * math.tanh(c)
                gates[i, s, j] = ig
                gates[i, s, h + j] = fg
                gates[i, s, 2 * h + j] = og
                gates[i, s, 3 * h + j] = gg
                cs[i, s, j] = c
                hs[i, s, j] = hv
        for i in range(b):
            for j in range(h):
                h_prev[i, j] = hs[i, s, j]
                c_prev[i, j] = cs[i, s, j]
    return hs, cs, gates


def _forward_np(xw, u, p):
    b, t, h4 = xw.shape
    h = h4 // 4
    hs = np.zeros((b, t, h))
    cs = np.zeros((b, t, h))
    gates = np.empty((b, t, h4))
    h_prev = np.zeros((b, h))
    c_prev = np.zeros((b, h))
    for s in range(t):
        z = xw[:, s, :] + h_prev @ u
        z[:, :3 * h] += (p[None, :, :] * c_prev[:, None, :]).reshape(b, 3 * h)
        sg = 1.0 / (1.0 + np.exp(-z[:, :3 * h]))
        gg = np.tanh(z[:, 3 * h:])
        c = sg[:, h:2 * h] * c_prev + sg[:, :h] * gg
        hv = sg[:, 2 * h:] * np.tanh(c)
        gates[:, s, :3 * h] = sg
        gates[:, s, 3 * h:] = gg
        cs[:, s] = c
        hs[:, s] = hv
        h_prev, c_prev = hv, c
    return hs, cs, gates


@njit
def _backward_nb(dh_out, cs, gates, u, p):
    b, t, h = dh_out.shape
    dz = np.zeros((b, t, 4 * h))
    dp = np.zeros((3, h))
    dh_next = np.zeros((b, h))
    dc_next = np.zeros((b, h))
    ut = np.ascontiguousarray(u.T)
    step = np.empty((b, 4 * h))
    for s in range(t - 1, -1, -1):
        for i in range(b):
            for j in range(h):
                cp = cs[i, s - 1, j] if s > 0 else 0.0
                ig = gates[i, s, j]
                fg = gates[i, s, h + j]
                og = gates[i, s, 2 * h + j]
                gg = gates[i, s, 3 * h + j]
                tc = math.tanh(cs[i, s, j])
                dh = dh_out[i, s, j] + dh_next[i, j]
                do = dh * tc
                dc = dc_next[i, j] + dh * og * (1.0 - tc * tc)
                dzi = dc * gg * ig * (1.0 - ig)
                dzf = dc * cp * fg * (1.0 - fg)
                dzo = do * og * (1.0 - og)
                dzg = dc * ig * (1.0 - gg * gg)
                step[i, j] = dzi
                step[i, h + j] = dzf
                step[i, 2 * h + j] = dzo
                step[i, 3 * h + j] = dzg
                dp[0, j] += dzi * cp
                dp[1, j] += dzf * cp
                dp[2, j] += dzo * cp
                dc_next[i, j] = dc * fg + dzi * p[0, j] + dzf * p[1, j] + dzo * p[2, j]
        for i in range(b):
            for k in range(4 * h):
                dz[i, s, k] = step[i, k]
        dh_next = np.dot(step, ut)
    return dz, dp


def _backward_np(dh_out, cs, gates, u, p):
    b, t, h = dh_out.shape
    dz = np.zeros((b, t, 4 * h))
    dp = np.zeros((3, h))
    dh_next = np.zeros((b, h))
    dc_next = np.zeros((b, h))
    for s in range(t - 1, -1, -1):
        cp = cs[:, s - 1] if s > 0 else np.zeros((b, h))
        ig, fg, og, gg = (gates[:, s, k * h:(k + 1) * h] for k in range(4))
        tc = np.tanh(cs[:, s])
        dh = dh_out[:, s] + dh_next
        do = dh * tc
        dc = dc_next + dh * og * (1.0 - tc * tc)
        dzi = dc * gg * ig * (1.0 - ig)
        dzf = dc * cp * fg * (1.0 - fg)
        dzo = do * og * (1.0 - og)
        dzg = dc * ig * (1.0 - gg * gg)
        step = np.concatenate([dzi, dzf, dzo, dzg], axis=1)
        dz[:, s] = step
        dp[0] += (dzi * cp).sum(axis=0)
        dp[1] += (dzf * cp).sum(axis=0)
        dp[2] += (dzo * cp).sum(axis=0)
        dc_next = dc * fg + dzi * p[0] + dzf * p[1] + dzo * p[2]
        dh_next = step @ u.T
    return dz, dp


def lstm_forward_arrays(xw, u, p):
    """Raw kernel call: (hidden states, cell states, activated gates)."""
    return select(_forward_nb, _forward_np)(np.ascontiguousarray(xw), np.ascontiguousarray(u), np.ascontiguousarray(p))


def lstm_backward_arrays(dh, cs, gates, u, p):
    return select(_backward_nb, _backward_np)(np.ascontiguousarray(dh), cs, gates, np.ascontiguousarray(u),
                                              np.ascontiguousarray(p))


def lstm_sequence(x, w, u, p, b) -> Tensor:
    """Run one LSTM direction over (B, T, In) inputs from a zero state; returns (B, T, H)."""
    x, w, u, p, b = (as_tensor(a) for a in (x, w, u, p, b))
    if x.ndim != 3:
        raise ShapeMismatch(f"lstm_sequence expects (B, T, In), got {x.shape}")
    bsz, t, n_in = x.shape
    h = u.shape[0]
    if w.shape != (n_in, 4 * h) or u.shape != (h, 4 * h) or p.shape != (3, h) or b.shape != (4 * h,):
        raise ShapeMismatch(f"lstm params W{w.shape} U{u.shape} P{p.shape} b{b.shape} for input {n_in}, hidden {h}")
    xw = (x.data.reshape(bsz * t, n_in) @ w.data).reshape(bsz, t, 4 * h) + b.data
    hs, cs, gates = lstm_forward_arrays(xw, u.data, p.data)

    def bw(g):
        dz, dp = lstm_backward_arrays(g, cs, gates, u.data, p.data)
        dz2 = dz.reshape(bsz * t, 4 * h)
        gx = (dz2 @ w.data.T).reshape(bsz, t, n_in) if x.requires_grad else None
        gw = x.data.reshape(bsz * t, n_in).T @ dz2 if w.requires_grad else None
        gu = None
        if u.requires_grad:
            h_prev = np.zeros_like(hs)
            h_prev[:, 1:] = hs[:, :-1]
            gu = h_prev.reshape(bsz * t, h).T @ dz2
        gb = dz2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gu, dp, gb

    return make_op("lstm_sequence", (x, w, u, p, b), hs, bw, saved=(cs, gates))


def reversal_index(lengths, t: int) -> np.ndarray:
    """Per-row time permutation reversing the first ``len`` steps, PAD steps fixed."""
    idx = np.tile(np.arange(t), (len(lengths), 1))
    for r, n in enumerate(lengths):
        n = int(n)
        idx[r, :n] = np.arange(n - 1, -1, -1)
    return idx


def time_permute(x, idx: np.ndarray) -> Tensor:
    """y[b, t] = x[b, idx[b, t]] for a per-row permutation ``idx``."""
    x = as_tensor(x)
    rows = np.arange(x.shape[0])[:, None]
    y = x.data[rows, idx]

    def bw(g):
        out = np.zeros_like(x.data)
        out[rows, idx] = g
        return (out,)

    return make_op("time_permute", (x,), y, bw)
