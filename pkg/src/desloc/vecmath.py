"""Dense vector helpers shared by the optimizer, sync and simulation code.

A parameter vector is a 1-D float64 numpy array. Functions here never mutate
their inputs.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from desloc import kernels


def as_vector(values, dim: int | None = None) -> np.ndarray:
    """Copy ``values`` into a finite float64 vector, optionally checking its length."""
    v = np.array(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def _check_rho(rho: float) -> None:
    if not rho > 0:
        raise ValueError(f"clipping radius must be positive, got {rho}")


def clip_coordinatewise(g, rho: float) -> np.ndarray:
    """``sign(g_i) * min(|g_i|, rho)`` for every coordinate."""
    _check_rho(rho)
    return np.clip(np.asarray(g, dtype=np.float64), -rho, rho)


def clip_by_norm(g, rho: float) -> np.ndarray:
    """Rescale ``g`` by ``min(1, rho / ||g||_2)``."""
    _check_rho(rho)
    g = np.array(g, dtype=np.float64)
    if g.size:
        rows = np.ascontiguousarray(g.reshape(1, -1))
        kernels.clip_rows_norm(rows, rho)
        g = rows.reshape(g.shape)
    return g


def mean_across_workers(vs: Sequence) -> np.ndarray:
    """Coordinate-wise mean of equally sized vectors.

    Accumulation is compensated and runs in list order, so the result is
    reproducible bit for bit and identical replicas average to themselves.
    """
    if len(vs) == 0:
        raise ValueError("cannot average an empty list of vectors")
    rows = [np.asarray(v, dtype=np.float64) for v in vs]
    d = rows[0].shape
    for r in rows:
        if r.ndim != 1 or r.shape != d:
            raise ValueError(f"dimension mismatch: {r.shape} vs {d}")
    return kernels.mean_rows(np.ascontiguousarray(np.stack(rows)))


def l2_norm(v) -> float:
    return float(np.sqrt(np.dot(v, v)))


def linf_norm(v) -> float:
    v = np.asarray(v)
    return float(np.max(np.abs(v))) if v.size else 0.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return a - b


def mul(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return a * b


def div(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    if np.any(b == 0.0):
        raise ZeroDivisionError("division by a zero coordinate")
    return a / b


def sqrt(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0.0):
        raise ValueError("square root of a negative coordinate")
    return np.sqrt(a)


def elementwise_max(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return np.maximum(a, b)
