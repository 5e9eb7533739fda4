"""Input validation helpers shared across the toolkit.

Mirrors the spirit of sklearn's ``check_array``: every public entry point
funnels its tensors through these so shape/finiteness failures carry the
offending tensor's name instead of a bare numpy traceback.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """A tensor's shape disagrees with the model configuration."""


def check_finite(x: np.ndarray, name: str = "array") -> np.ndarray:
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return x


def check_matrix(x, name: str = "matrix", dtype=np.float32) -> np.ndarray:
    """Return ``x`` as a finite, C-contiguous 2-D array of ``dtype``."""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D, got {arr.ndim}-D")
    check_finite(arr, name)
    return arr


def check_vector(x, name: str = "vector", dtype=np.float32) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=dtype)
    if arr.ndim != 1:
        raise ShapeError(f"{name}: expected 1-D, got {arr.ndim}-D")
    check_finite(arr, name)
    return arr


def check_shape(x: np.ndarray, shape: tuple, name: str) -> np.ndarray:
    if tuple(x.shape) != tuple(shape):
        raise ShapeError(f"{name}: expected shape {tuple(shape)}, got {tuple(x.shape)}")
    return x
