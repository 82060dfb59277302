"""Flat float64 parameter vectors.

Weights, gradients and momentum buffers are all plain 1-D numpy arrays of
dtype float64.  Every helper here returns a fresh read-only array and raises
instead of letting a NaN or Inf through.
"""
from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Vectors (or matrices) whose shapes do not line up."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def _freeze(a: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{op}: non-finite result")
    a.flags.writeable = False
    return a


def vector(values) -> np.ndarray:
    """Copy ``values`` into a read-only, finite, non-empty float64 vector."""
    a = np.array(values, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise DimensionError("parameter vector must have positive length")
    return _freeze(a, "vector")


def zeros(n: int) -> np.ndarray:
    if n <= 0:
        raise DimensionError("parameter vector must have positive length")
    return _freeze(np.zeros(n), "zeros")


def _same_length(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"{op}: length mismatch {a.shape} vs {b.shape}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_length(a, b, "add")
    with np.errstate(over="ignore", invalid="ignore"):
        return _freeze(np.add(a, b), "add")


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_length(a, b, "sub")
    with np.errstate(over="ignore", invalid="ignore"):
        return _freeze(np.subtract(a, b), "sub")


def scale(a: np.ndarray, c: float) -> np.ndarray:
    if not np.isfinite(c):
        raise NonFiniteError("scale: non-finite factor")
    with np.errstate(over="ignore", invalid="ignore"):
        return _freeze(np.multiply(a, float(c)), "scale")


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_length(a, b, "hadamard")
    with np.errstate(over="ignore", invalid="ignore"):
        return _freeze(np.multiply(a, b), "hadamard")


def axpy(c: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``y + c * x`` in one pass."""
    _same_length(x, y, "axpy")
    if not np.isfinite(c):
        raise NonFiniteError("axpy: non-finite factor")
    with np.errstate(over="ignore", invalid="ignore"):
        return _freeze(y + float(c) * x, "axpy")


def l2_norm(a: np.ndarray) -> float:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("l2_norm: non-finite input")
    # scaled to survive entries near the float64 limit
    m = float(np.max(np.abs(a))) if a.size else 0.0
    if m == 0.0:
        return 0.0
    return m * float(np.sqrt(np.sum((a / m) ** 2)))


def weighted_sum(weights, vectors) -> np.ndarray:
    """``sum_k weights[k] * vectors[k]`` with weights taken as given."""
    vectors = list(vectors)
    weights = [float(w) for w in weights]
    if not vectors:
        raise DimensionError("weighted_sum: empty input")
    if len(weights) != len(vectors):
        raise DimensionError("weighted_sum: weights and vectors differ in count")
    out = np.zeros_like(vectors[0], dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        for w, v in zip(weights, vectors):
            _same_length(v, vectors[0], "weighted_sum")
            out += w * v
    return _freeze(out, "weighted_sum")
