"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np


def check_bits(outcomes, name="outcomes"):
    """Return `outcomes` as a 1-D int8 array, raising if any entry is not 0/1."""
    arr = np.asarray(outcomes)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must contain at least one outcome")
    if arr.dtype == bool:
        return arr.astype(np.int8)
    if not np.issubdtype(arr.dtype, np.number):
        raise ValueError(f"{name} must be numeric 0/1 values")
    bad = (arr != 0) & (arr != 1)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise ValueError(f"{name}[{idx}] = {arr[idx]!r} is not 0 or 1")
    return arr.astype(np.int8)


def check_bit_matrix(X):
    """Validate a (n_circuits, n_samples) array of 0/1 outcomes."""
    arr = np.asarray(X)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ValueError(f"expected a 2-D array of clickstreams, got shape {arr.shape}")
    if arr.dtype != bool and np.any((arr != 0) & (arr != 1)):
        raise ValueError("clickstream entries must be 0 or 1")
    return arr.astype(np.int8)


def check_probabilities(p, name="p"):
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D array")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    return arr


def check_fraction(value, name, *, low=0.0, high=1.0, closed=False):
    """Check `low < value < high` (or `<=` when `closed`) and return it as float."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    ok = (low <= value <= high) if closed else (low < value < high)
    if not ok:
        bounds = f"[{low}, {high}]" if closed else f"({low}, {high})"
        raise ValueError(f"{name} must lie in {bounds}, got {value}")
    return value
