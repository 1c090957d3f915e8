"""Backend selection for the hot numeric kernels.

Two interchangeable implementations exist: ``_kernels_numba`` (JIT-compiled
loops, the default when numba is importable) and ``_kernels_numpy`` (pure
vectorized numpy). Select explicitly with the environment variable
``FRINGEFINDER_BACKEND=numba|numpy`` before first import; the choice is
fixed for the lifetime of the process. Both backends implement the same
functions with identical semantics; results agree to floating-point
tolerance but are not bitwise identical across backends (summation order
differs). Within one backend every kernel is deterministic.

Exported kernels:
    wrapped_gradient(phase)          -> gradient magnitude field
    conv2d_forward(x, w, b)          -> valid convolution, stride 1
    conv2d_backward(x, w, dy)        -> (dx, dw, db)
    maxpool2_forward(x, size)        -> (pooled, argmax)
    maxpool2_backward(x_shape, argmax, dy, size) -> dx
"""

from __future__ import annotations

import importlib
import logging
import os

log = logging.getLogger(__name__)

_ENV_VAR = "FRINGEFINDER_BACKEND"
_VALID = ("numba", "numpy")


def _numba_importable() -> bool:
    try:
        importlib.import_module("numba")
    except ImportError:
        return False
    return True


def get_backend(name: str | None = None):
    """Return the kernel module for `name` (or the environment's choice)."""
    if name is None:
        name = os.environ.get(_ENV_VAR, "").strip().lower() or None
    if name is None:
        name = "numba" if _numba_importable() else "numpy"
        if name == "numpy":
            log.warning("numba not importable, falling back to numpy kernels")
    if name not in _VALID:
        raise ValueError(f"unknown kernel backend {name!r}, expected one of {_VALID}")
    return importlib.import_module(f"fringefinder._kernels_{name}")


_active = get_backend()

ACTIVE_BACKEND: str = _active.BACKEND_NAME

wrapped_gradient = _active.wrapped_gradient
conv2d_forward = _active.conv2d_forward
conv2d_backward = _active.conv2d_backward
maxpool2_forward = _active.maxpool2_forward
maxpool2_backward = _active.maxpool2_backward
