"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import math

import numpy as np
from sklearn.utils.validation import check_array


def check_points(points) -> np.ndarray:
    """Coerce to a finite float array of shape ``(n, 2)``.

    A single point of shape ``(2,)`` is promoted to ``(1, 2)``.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    arr = check_array(arr, dtype=float, ensure_min_samples=0)
    if arr.shape[1] != 2:
        raise ValueError(f"points must have 2 columns, got {arr.shape[1]}")
    return arr


def check_position(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.shape != (2,):
        raise ValueError(f"a position has 2 coordinates, got shape {np.shape(p)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("position must be finite")
    return arr


def check_positive(value, name: str, strict: bool = True) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return value
