"""Dense numerical primitives used by every other module.

All functions here are pure and deterministic: reductions run in a fixed
order (sequential over the natural index where bit-stability matters), so
repeated calls with identical inputs are bit-identical across runs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .validation import check_finite

# Distance below which a Weiszfeld iterate is treated as sitting on a data
# point; that point is skipped for the step to avoid a division blow-up.
_COINCIDENT_GUARD = 1e-12

_HALF = np.float32(0.5)
_ONE = np.float32(1.0)
_INV_SQRT2 = np.float32(1.0 / np.sqrt(2.0))


def round_half_up(x: float) -> int:
    """Round to the nearest integer, halves away from zero.

    Used for every keep-count rule in the toolkit so plans and FLOPs
    accounting agree exactly (Python's banker's rounding would not).
    """
    return int(np.floor(x + 0.5))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """float32 ``a @ b`` accumulated sequentially over the inner axis.

    One rank-1 update per inner index keeps the per-element summation a
    strict left fold, independent of BLAS blocking. Consequence relied on
    throughout the engine: an inner dimension whose contributions are all
    exactly zero can be removed without changing the result bit-wise.
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float32)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact erf-based GELU: 0.5 * x * (1 + erf(x / sqrt(2))).

    The erf form (not the tanh approximation) removes one source of
    cross-implementation drift; float32 in, float32 out.
    """
    x = np.asarray(x, dtype=np.float32)
    return _HALF * x * (_ONE + erf(x * _INV_SQRT2))


def stable_softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-shift stabilization.

    Each output row is non-negative and sums to 1; adding a constant to a
    row leaves its output unchanged up to rounding.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"stable_softmax_rows: expected 2-D, got {x.ndim}-D")
    check_finite(x, "softmax input")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def geometric_median(points: np.ndarray, tol: float = 1e-6, max_iter: int = 200) -> np.ndarray:
    """Weiszfeld fixed-point estimate of the point minimizing sum of L2 distances.

    Starts from the centroid; a point coinciding with the current iterate
    (distance < 1e-12) is skipped for that step. Stops when the update norm
    drops below ``tol`` or after ``max_iter`` iterations.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("geometric_median: no points")
    if not tol > 0:
        raise ValueError("geometric_median: tol must be positive")
    if max_iter < 1:
        raise ValueError("geometric_median: max_iter must be >= 1")
    check_finite(pts, "geometric_median points")

    y = pts.mean(axis=0)
    for _ in range(max_iter):
        dist = np.linalg.norm(pts - y, axis=1)
        live = dist > _COINCIDENT_GUARD
        if not live.any():
            return y
        w = 1.0 / dist[live]
        y_next = (pts[live] * w[:, None]).sum(axis=0) / w.sum()
        if np.linalg.norm(y_next - y) < tol:
            return y_next
        y = y_next
    return y


def geometric_median_objective(points: np.ndarray, y: np.ndarray) -> float:
    """Sum of Euclidean distances from ``y`` to each row of ``points``."""
    pts = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(pts - np.asarray(y, dtype=np.float64), axis=1).sum())


def singular_values(x: np.ndarray) -> np.ndarray:
    """Singular values of a matrix, non-negative and non-increasing."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"singular_values: expected non-empty 2-D input, got shape {arr.shape}")
    check_finite(arr, "singular_values input")
    return np.linalg.svd(arr, compute_uv=False)


def least_squares(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Minimize ||A b - y||_2 for an N x K design with N >= K.

    Rank-deficient designs resolve to the minimum-norm solution.
    """
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if a.ndim != 2:
        raise ValueError(f"least_squares: expected 2-D design, got {a.ndim}-D")
    n, k = a.shape
    if n < k:
        raise ValueError("least_squares: underdetermined")
    if y.shape[0] != n:
        raise ValueError(f"least_squares: design has {n} rows but target has {y.shape[0]}")
    check_finite(a, "least_squares design")
    check_finite(y, "least_squares target")
    beta, _, _, _ = np.linalg.lstsq(a, y, rcond=None)
    return beta
