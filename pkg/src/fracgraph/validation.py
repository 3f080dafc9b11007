"""Input validation helpers shared across the public API."""

import numpy as np


def as_float_array(x, name="array", ndim=None, width=None):
    """Coerce to a C-contiguous float64 array, checking rank and column count."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have ndim={ndim}, got {arr.ndim}")
    if width is not None and arr.shape[-1] != width:
        raise ValueError(f"{name} must have width {width}, got {arr.shape[-1]}")
    return arr


def check_finite(x, name="array"):
    arr = np.asarray(x)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_positive(x, name="value"):
    arr = np.asarray(x)
    if np.any(arr <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return arr


def require(cond, message):
    if not cond:
        raise ValueError(message)
