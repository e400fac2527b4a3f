"""Input validation helpers shared by the estimators and free functions."""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch


def check_vertices(X, name="X", min_points=1):
    """Return ``X`` as a float64 ``(N, 3)`` array.

    ``(N, 2)`` input is promoted by appending ``z = 0``. Raises ``ValueError``
    on non-finite values or too few points.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValueError(f"{name} must have shape (N, 2) or (N, 3), got {arr.shape}")
    if arr.shape[1] == 2:
        arr = np.column_stack([arr, np.zeros(len(arr))])
    if len(arr) < min_points:
        raise ValueError(f"{name} needs at least {min_points} points, got {len(arr)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


def check_paired(v, g, min_points=1):
    """Validate two configurations that are compared vertex by vertex."""
    v = check_vertices(v, "v", min_points)
    g = check_vertices(g, "g", min_points)
    if v.shape != g.shape:
        raise DimensionMismatch(f"vertex counts differ: {len(v)} vs {len(g)}")
    return v, g


def check_mask(mask, name="mask"):
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2D grid, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def check_unit_interval(value, name, open_=True):
    value = float(value)
    ok = 0.0 < value < 1.0 if open_ else 0.0 <= value <= 1.0
    if not ok:
        bounds = "(0, 1)" if open_ else "[0, 1]"
        raise ValueError(f"{name} must lie in {bounds}, got {value}")
    return value


def check_positive(value, name):
    value = float(value)
    if not value > 0.0 or not np.isfinite(value):
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value
