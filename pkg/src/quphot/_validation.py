"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import column_or_1d

# Largest timestamp the int64 kernels can difference without overflow.
MAX_TIMESTAMP_PS = np.iinfo(np.int64).max // 4


def check_timestamps(timestamps, name="timestamps"):
    """Return `timestamps` as a read-only, strictly increasing uint64 array."""
    arr = np.asarray(timestamps)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size and arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.floor(arr)):
            raise ValueError(f"{name} must be integral picosecond counts")
    if arr.size and arr.dtype.kind in "if" and arr.min() < 0:
        raise ValueError(f"{name} must be non-negative")
    arr = arr.astype(np.uint64, copy=True)
    if arr.size and arr[-1] > MAX_TIMESTAMP_PS:
        raise ValueError(f"{name} exceed the supported range ({MAX_TIMESTAMP_PS} ps)")
    if arr.size > 1 and not np.all(arr[1:] > arr[:-1]):
        bad = int(np.argmin(arr[1:] > arr[:-1])) + 1
        raise ValueError(f"{name} not strictly increasing at index {bad}")
    arr.flags.writeable = False
    return arr


def check_positive(value, name, *, strict=True, integer=False):
    if integer and not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return value


def check_probability(value, name):
    if not isinstance(value, numbers.Real) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_grid(grid, name="wavelength grid", *, min_size=2):
    """Return a strictly increasing, finite float64 grid."""
    arr = column_or_1d(np.asarray(grid, dtype=np.float64), warn=False)
    if arr.size < min_size:
        raise ValueError(f"{name} needs at least {min_size} samples, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if not np.all(np.diff(arr) > 0):
        raise ValueError(f"{name} must be strictly increasing")
    return arr


def check_samples(values, grid, name="values"):
    arr = column_or_1d(np.asarray(values, dtype=np.float64), warn=False)
    if arr.shape != grid.shape:
        raise ValueError(f"{name} has {arr.size} samples but the grid has {grid.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def is_uniform(grid, rtol=1e-6):
    step = np.diff(grid)
    return bool(np.all(np.abs(step - step.mean()) <= rtol * abs(step.mean())))
