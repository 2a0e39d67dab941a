"""Layer framework and kernel backends.

Models train in float32 by default; tests that need tight finite-difference
agreement run under dtype_scope(np.float64). Pure-math operations elsewhere
(softmax, quantiles, sharpening) always compute in float64 regardless.
"""

from contextlib import contextmanager

import numpy as np

_DEFAULT_DTYPE = np.float32


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype):
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be np.float32 or np.float64")
    _DEFAULT_DTYPE = dtype


@contextmanager
def dtype_scope(dtype):
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


from . import backend, layers  # noqa: E402

__all__ = ["backend", "layers", "default_dtype", "set_default_dtype", "dtype_scope"]
