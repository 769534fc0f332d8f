"""Central finite differences as an independent check on tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import ContractError, NumericError, Tape, Tensor


def _scalar(fn: Callable[[Tensor], Tensor], value: np.ndarray) -> float:
    tape = Tape()
    out = fn(tape.leaf(value, role="theta", name="x"))
    if out.data.size != 1:
        raise ContractError(f"function must return a scalar, got shape {out.shape}")
    v = float(out.data)
    if not np.isfinite(v):
        raise NumericError("non-finite function value during finite differencing")
    return v


def analytic_gradient(fn: Callable[[Tensor], Tensor], point) -> np.ndarray:
    tape = Tape()
    x = tape.leaf(np.array(point, dtype=np.float64), role="theta", name="x")
    return tape.gradients(fn(x))["x"]


def numeric_gradient(fn: Callable[[Tensor], Tensor], point, epsilon: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar tape function."""
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + epsilon
        hi = _scalar(fn, x.copy())
        flat[k] = orig - epsilon
        lo = _scalar(fn, x.copy())
        flat[k] = orig
        gflat[k] = (hi - lo) / (2.0 * epsilon)
    return grad


def finite_difference_check(fn: Callable[[Tensor], Tensor], point, epsilon: float = 1e-4) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |analytic|)``.

    ``fn`` maps a tape tensor to a scalar tape tensor, so the same code path
    produces both the analytic (reverse sweep) and numeric gradients.
    """
    analytic = analytic_gradient(fn, point)
    numeric = numeric_gradient(fn, point, epsilon)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
