"""Input validation helpers shared by the public entry points."""
import numbers

import numpy as np


def check_point(x, dim=None, name="x"):
    """Return ``x`` as a finite 1-D float array, optionally of length ``dim``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must have at least one coordinate")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_same_dim(x, y):
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")


def check_matrix(M, name="M"):
    arr = np.asarray(M, dtype=float)
    if arr.ndim != 2 or 0 in arr.shape:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_scalar(value, name, *, min_val=None, strict=False, integer=False):
    """Validate a real (or integer) scalar against an optional lower bound."""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a real number'}, got {value!r}")
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    if min_val is not None:
        if strict and not value > min_val:
            raise ValueError(f"{name} must be > {min_val}, got {value!r}")
        if not strict and not value >= min_val:
            raise ValueError(f"{name} must be >= {min_val}, got {value!r}")
    return value
