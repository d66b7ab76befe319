"""
Finite-difference gradient checking.
"""
from typing import Callable

import numpy as np

FD_STEP = 1e-6


def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray,
                       h: float = FD_STEP) -> np.ndarray:
    """Central differences (fn(x + h e_k) - fn(x - h e_k)) / 2h for every entry k."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x, flat_g = x.reshape(-1), grad.reshape(-1)
    for k in range(flat_x.size):
        original = flat_x[k]
        flat_x[k] = original + h
        upper = float(fn(x))
        flat_x[k] = original - h
        lower = float(fn(x))
        flat_x[k] = original
        flat_g[k] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-12) -> float:
    """||a - b|| / max(||a||, ||b||, floor)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
