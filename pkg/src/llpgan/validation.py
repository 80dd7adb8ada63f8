"""Input validation helpers used across modules.

Numeric arguments are accepted as anything ``np.asarray`` understands; the
helpers normalize to float64/int64 arrays and raise package exceptions with
the offending argument named.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigurationError, LabelDomainError, NumericDomainError

SIMPLEX_ATOL = 1e-6


def check_finite(values, name="array"):
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericDomainError(f"{name} contains non-finite entries")
    return arr


def check_simplex(values, name="proportions", atol=SIMPLEX_ATOL):
    """Validate that each row (last axis) is a probability vector."""
    arr = check_finite(values, name)
    if arr.ndim == 0 or arr.shape[-1] < 1:
        raise ConfigurationError(f"{name} must have at least one entry per row")
    if np.any(arr < -atol):
        raise ConfigurationError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > atol):
        raise ConfigurationError(f"{name} rows must sum to 1 within {atol}")
    return arr


def check_labels(labels, k, name="labels"):
    arr = np.asarray(labels)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        rounded = np.asarray(arr, dtype=np.int64)
        if not np.array_equal(rounded, arr):
            raise LabelDomainError(f"{name} must be integers")
        arr = rounded
    arr = arr.astype(np.int64, copy=False)
    if arr.size and (arr.min() < 0 or arr.max() >= k):
        raise LabelDomainError(f"{name} must lie in [0, {k - 1}]")
    return arr


def check_positive_int(value, name):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
        raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)

