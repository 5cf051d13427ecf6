from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def finite_diff_grad(f: Callable[[], Tensor], param: Tensor, eps: float = 1e-6) -> Tensor:
    """Central-difference gradient of the scalar ``f()`` with respect to ``param``.

    ``f`` must read ``param.data`` when called; coordinates are perturbed in
    place one at a time and restored before returning.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    if not param.data.flags.c_contiguous:
        param.data = np.ascontiguousarray(param.data)
    flat = param.data.reshape(-1)
    grad = np.zeros(flat.shape)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            try:
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
            finally:
                flat[i] = orig
            grad[i] = (fp - fm) / (2.0 * eps)
    return Tensor(grad.reshape(param.shape))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Max abs difference scaled by the larger of the two max magnitudes."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    diff = float(np.max(np.abs(a - n))) if a.size else 0.0
    scale = max(float(np.max(np.abs(a))) if a.size else 0.0,
                float(np.max(np.abs(n))) if n.size else 0.0, floor)
    return diff / scale
