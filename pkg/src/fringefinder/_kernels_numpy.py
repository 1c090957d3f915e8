"""Pure-numpy kernel implementations (fallback backend).

Convolution uses im2col views via ``sliding_window_view`` + einsum; the
pooling argmax is taken in row-major window order so gradient routing is
identical to the numba backend.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND_NAME = "numpy"

_TWO_PI = 2.0 * np.pi


def _wrap(phi):
    r = np.pi - np.mod(np.pi - phi, _TWO_PI)
    r = np.where(r <= -np.pi, r + _TWO_PI, r)
    return np.where((phi > -np.pi) & (phi <= np.pi), phi, r)


def wrapped_gradient(phase):
    h, w = phase.shape
    p = phase.astype(np.float64)
    dx = np.empty((h, w))
    dx[:, :-1] = _wrap(p[:, 1:] - p[:, :-1])
    dx[:, -1] = _wrap(p[:, -1] - p[:, -2])
    dy = np.empty((h, w))
    dy[:-1, :] = _wrap(p[1:, :] - p[:-1, :])
    dy[-1, :] = _wrap(p[-1, :] - p[-2, :])
    return np.hypot(dx, dy).astype(phase.dtype)


def conv2d_forward(x, w, b):
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # [n,c,oh,ow,kh,kw]
    y = np.einsum("ncrsuv,ocuv->nors", win, w, optimize=True)
    y += b[None, :, None, None]
    return np.ascontiguousarray(y.astype(x.dtype, copy=False))


def conv2d_backward(x, w, dy):
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    dw = np.einsum("nors,ncrsuv->ocuv", dy, win, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    pad = np.pad(dy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    pwin = sliding_window_view(pad, (kh, kw), axis=(2, 3))  # [n,o,h,w,kh,kw]
    wf = w[:, :, ::-1, ::-1]
    dx = np.einsum("noijuv,ocuv->ncij", pwin, wf, optimize=True)
    return (
        np.ascontiguousarray(dx.astype(x.dtype, copy=False)),
        np.ascontiguousarray(dw.astype(x.dtype, copy=False)),
        np.ascontiguousarray(db.astype(x.dtype, copy=False)),
    )


def maxpool2_forward(x, size):
    n, c, h, w = x.shape
    oh, ow = h // size, w // size
    xt = x[:, :, : oh * size, : ow * size]
    win = xt.reshape(n, c, oh, size, ow, size).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(n, c, oh, ow, size * size)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), arg.astype(np.int64)


def maxpool2_backward(xshape, arg, dy, size):
    n, c, oh, ow = dy.shape
    dx = np.zeros(xshape, dtype=dy.dtype)
    u, v = arg // size, arg % size
    ii, cc, rr, ss = np.indices((n, c, oh, ow), sparse=False)
    np.add.at(dx, (ii, cc, rr * size + u, ss * size + v), dy)
    return dx
