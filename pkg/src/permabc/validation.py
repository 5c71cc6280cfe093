"""Input-validation helpers used across the public API."""

from __future__ import annotations

import numbers

import numpy as np


def check_rng(rng) -> np.random.Generator:
    """Coerce ``rng`` to a numpy Generator.

    Accepts an existing Generator (returned as-is) or an integer seed.
    """
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise TypeError(f"expected a numpy Generator or integer seed, got {type(rng).__name__}")


def as_matrix(values, name: str = "array") -> np.ndarray:
    """Coerce to a 2-D float array, rejecting ragged or empty input."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :] if arr.size else arr.reshape(0, 0)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    return arr


def check_cost_matrix(cost, name: str = "cost") -> np.ndarray:
    """Validate a finite, nonnegative cost matrix."""
    arr = as_matrix(cost, name)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(arr < 0):
        raise ValueError(f"{name} contains negative entries")
    return arr


def check_positive(value, name: str):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_in_unit_interval(value, name: str, *, open_left: bool = True, open_right: bool = False):
    lo_ok = value > 0 if open_left else value >= 0
    hi_ok = value < 1 if open_right else value <= 1
    if not (isinstance(value, numbers.Real) and lo_ok and hi_ok):
        raise ValueError(f"{name} must lie in the unit interval, got {value!r}")
    return float(value)
