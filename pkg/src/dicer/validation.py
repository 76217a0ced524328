"""Input checks for the estimator interface."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DataError


def check_interactions(X, num_users=None, num_items=None, name="X"):
    """Return ``X`` as an ``(n, 2)`` int64 array of (user, item) indices.

    Indices must be nonnegative and, when the bounds are given, below them.
    """
    try:
        arr = check_array(X, dtype=None, ensure_2d=True, ensure_min_samples=1)
    except ValueError as exc:
        raise DataError(f"{name}: {exc}") from None
    if arr.shape[1] != 2:
        raise DataError(f"{name} must have two columns (user, item), got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise DataError(f"{name} must hold integer indices")
    arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise DataError(f"{name} holds negative indices")
    for col, bound, what in ((0, num_users, "user"), (1, num_items, "item")):
        if bound is not None and arr[:, col].max() >= bound:
            raise DataError(f"{name}: {what} index {arr[:, col].max()} out of range (< {bound})")
    return arr


def check_social(social, num_users, name="social"):
    """``(m, 2)`` user-user edges, or an empty array when ``social`` is None."""
    if social is None or len(social) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return check_interactions(social, num_users, num_users, name=name)


def check_users(users, num_users, name="users"):
    arr = np.asarray(users)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        raise DataError(f"{name} must be a 1-D array of integer user indices")
    if len(arr) and (arr.min() < 0 or arr.max() >= num_users):
        raise DataError(f"{name} out of range [0, {num_users})")
    return arr.astype(np.int64)
