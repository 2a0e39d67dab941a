"""Kernel backend selection.

The hot convolution kernels exist twice: numba-jitted loops and a pure-numpy
im2col path. `CGSSL_BACKEND` picks one ("numba", "numpy", or "auto"); auto
prefers numba when it imports. Both produce the same values up to float
summation order, and each is individually deterministic.
"""

import logging
import os

import numpy as np

from . import kernels_numpy

log = logging.getLogger(__name__)

_ACTIVE = None


def _resolve() -> str:
    mode = os.environ.get("CGSSL_BACKEND", "auto").lower()
    if mode not in ("auto", "numpy", "numba"):
        raise ValueError(f"CGSSL_BACKEND must be auto|numpy|numba, got {mode!r}")
    if mode == "numpy":
        return "numpy"
    try:
        from . import kernels_numba  # noqa: F401
        return "numba"
    except ImportError:
        if mode == "numba":
            raise
        log.warning("numba unavailable, falling back to numpy kernels")
        return "numpy"


def active_backend() -> str:
    global _ACTIVE
    if _ACTIVE is None:
        _ACTIVE = _resolve()
    return _ACTIVE


def set_backend(name: str | None) -> None:
    """Force a backend ('numpy'/'numba'), or None to re-resolve from the env."""
    global _ACTIVE
    if name is None:
        _ACTIVE = None
        return
    if name not in ("numpy", "numba"):
        raise ValueError(name)
    if name == "numba":
        from . import kernels_numba  # noqa: F401
    _ACTIVE = name


def _kernels():
    if active_backend() == "numba":
        from . import kernels_numba
        return kernels_numba
    return kernels_numpy


def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0, need_ctx: bool = False):
    """Returns (y, ctx); ctx is backend-opaque state for conv2d_backward (or None)."""
    return _kernels().conv2d_forward(x, w, stride, pad, need_ctx)


def conv2d_backward(ctx, dy: np.ndarray):
    """Returns (dx, dw) for the forward pass that produced ctx."""
    return _kernels().conv2d_backward(ctx, dy)
