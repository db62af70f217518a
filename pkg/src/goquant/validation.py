"""Input validation helpers used across the public API surface."""

import numpy as np

from .errors import DataError


def as_float_matrix(X, name="X"):
    """Coerce to a 2-D float64 array, rejecting NaN/inf."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DataError(f"{name} must be 2-dimensional, got ndim={X.ndim}")
    if X.size == 0:
        raise DataError(f"{name} is empty")
    if not np.isfinite(X).all():
        raise DataError(f"{name} contains NaN or infinite values")
    return X


def as_float_vector(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"{name} must be 1-dimensional, got ndim={x.ndim}")
    if not np.isfinite(x).all():
        raise DataError(f"{name} contains NaN or infinite values")
    return x


def check_same_length(a, b, name_a="a", name_b="b"):
    if len(a) != len(b):
        raise DataError(
            f"{name_a} and {name_b} must have equal length, "
            f"got {len(a)} and {len(b)}"
        )


def check_in_choices(value, choices, name):
    if value not in choices:
        raise DataError(f"{name} must be one of {sorted(choices)}, got {value!r}")


def check_positive_int(value, name):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise DataError(f"{name} must be an integer, got {type(value).__name__}")
    if value < 1:
        raise DataError(f"{name} must be >= 1, got {value}")
    return int(value)
