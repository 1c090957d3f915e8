"""Numba-jitted kernel implementations.

All loops run in nopython mode with strict IEEE arithmetic (no fastmath),
so results are bit-stable run to run. Gradient routing in the pooling
backward pass picks the first maximum in row-major window order, matching
the numpy backend exactly.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

BACKEND_NAME = "numba"

_TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _wrap(phi):
    if -math.pi < phi <= math.pi:
        return phi
    r = math.pi - ((math.pi - phi) % _TWO_PI)
    if r <= -math.pi:
        r += _TWO_PI
    return r


@njit(cache=True)
def wrapped_gradient(phase):
    h, w = phase.shape
    out = np.empty((h, w), dtype=phase.dtype)
    for r in range(h):
        rn = r + 1 if r + 1 < h else r - 1
        for c in range(w):
            cn = c + 1 if c + 1 < w else c - 1
            v = float(phase[r, c])
            vx = float(phase[r, cn])
            vy = float(phase[rn, c])
            if math.isnan(v) or math.isnan(vx) or math.isnan(vy):
                out[r, c] = np.nan
            else:
                dx = _wrap(vx - v) if c + 1 < w else _wrap(v - vx)
                dy = _wrap(vy - v) if r + 1 < h else _wrap(v - vy)
                out[r, c] = math.sqrt(dx * dx + dy * dy)
    return out


# inner loops run over contiguous output columns so LLVM can vectorize them


@njit(cache=True)
def conv2d_forward(x, w, b):
    n, cin, h, wid = x.shape
    k = w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    oh = h - kh + 1
    ow = wid - kw + 1
    y = np.empty((n, k, oh, ow), dtype=x.dtype)
    for i in range(n):
        for o in range(k):
            for r in range(oh):
                row = y[i, o, r]
                for c in range(ow):
                    row[c] = b[o]
                for ci in range(cin):
                    for u in range(kh):
                        xrow = x[i, ci, r + u]
                        for v in range(kw):
                            wv = w[o, ci, u, v]
                            for c in range(ow):
                                row[c] += wv * xrow[c + v]
    return y


@njit(cache=True)
def conv2d_backward(x, w, dy):
    n, cin, h, wid = x.shape
    k = w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    oh = h - kh + 1
    ow = wid - kw + 1
    dx = np.zeros(x.shape, dtype=x.dtype)
    dw = np.zeros(w.shape, dtype=x.dtype)
    db = np.zeros(k, dtype=x.dtype)
    for i in range(n):
        for o in range(k):
            for r in range(oh):
                dyrow = dy[i, o, r]
                s = dyrow[0] - dyrow[0]
                for c in range(ow):
                    s += dyrow[c]
                db[o] += s
                for ci in range(cin):
                    for u in range(kh):
                        xrow = x[i, ci, r + u]
                        dxrow = dx[i, ci, r + u]
                        for v in range(kw):
                            wv = w[o, ci, u, v]
                            acc = dyrow[0] - dyrow[0]
                            for c in range(ow):
                                g = dyrow[c]
                                acc += xrow[c + v] * g
                                dxrow[c + v] += wv * g
                            dw[o, ci, u, v] += acc
    return dx, dw, db


@njit(cache=True)
def maxpool2_forward(x, size):
    n, c, h, w = x.shape
    oh = h // size
    ow = w // size
    y = np.empty((n, c, oh, ow), dtype=x.dtype)
    arg = np.empty((n, c, oh, ow), dtype=np.int64)
    for i in range(n):
        for ch in range(c):
            for r in range(oh):
                for s in range(ow):
                    best = x[i, ch, r * size, s * size]
                    bidx = 0
                    for u in range(size):
                        for v in range(size):
                            val = x[i, ch, r * size + u, s * size + v]
                            if val > best:
                                best = val
                                bidx = u * size + v
                    y[i, ch, r, s] = best
                    arg[i, ch, r, s] = bidx
    return y, arg


@njit(cache=True)
def maxpool2_backward(xshape, arg, dy, size):
    n, c, oh, ow = dy.shape
    dx = np.zeros(xshape, dtype=dy.dtype)
    for i in range(n):
        for ch in range(c):
            for r in range(oh):
                for s in range(ow):
                    idx = arg[i, ch, r, s]
                    u = idx // size
                    v = idx % size
                    dx[i, ch, r * size + u, s * size + v] += dy[i, ch, r, s]
    return dx
