"""Input validation helpers shared by the estimators and functional modules."""

from __future__ import annotations

import math
from numbers import Integral, Real

import numpy as np


class NotFittedError(ValueError, AttributeError):
    """Raised when a predictor is used before ``fit``."""


def check_positive_int(value, name, *, minimum=1):
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_real(value, name, *, low=None, high=None, low_inclusive=True, high_inclusive=True):
    """Validate a finite real scalar against optional bounds."""
    if isinstance(value, bool) or not isinstance(value, Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if low is not None:
        if value < low or (value == low and not low_inclusive):
            raise ValueError(f"{name}={value} below allowed range")
    if high is not None:
        if value > high or (value == high and not high_inclusive):
            raise ValueError(f"{name}={value} above allowed range")
    return value


def check_finite_array(arr, name, *, ndim=None, dtype=np.float64):
    arr = np.asarray(arr, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_pairs(pairs, num_nodes, name="pairs"):
    """Return ``pairs`` as an (m, 2) int64 array with ids inside ``[0, num_nodes)``."""
    arr = np.asarray(pairs, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (m, 2), got {arr.shape}")
    if arr.min() < 0 or arr.max() >= num_nodes:
        raise IndexError(f"{name} reference node ids outside [0, {num_nodes})")
    return arr


def check_binary_labels(labels, name="labels"):
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr.astype(np.int64)


def check_is_fitted(estimator, attribute="params_"):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call 'fit' first."
        )
