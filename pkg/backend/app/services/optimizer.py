"""
Bias-corrected Adam for named parameter sets.
"""
from dataclasses import dataclass, field

import numpy as np

from app.core.exceptions import ShapeError


@dataclass(frozen=True)
class AdamHyper:
    lr: float
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamMoments":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64))


def adam_update(param: np.ndarray, grad: np.ndarray, moments: AdamMoments,
                hyper: AdamHyper) -> tuple[np.ndarray, AdamMoments]:
    """One Adam step; returns the new parameter and moments, inputs untouched."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or moments.m.shape != param.shape:
        raise ShapeError("adam_update", param.shape, grad.shape, moments.m.shape)
    t = moments.t + 1
    m = hyper.beta1 * moments.m + (1.0 - hyper.beta1) * grad
    v = hyper.beta2 * moments.v + (1.0 - hyper.beta2) * (grad * grad)
    m_hat = m / (1.0 - hyper.beta1 ** t)
    v_hat = v / (1.0 - hyper.beta2 ** t)
    updated = param - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return updated, AdamMoments(m, v, t)


@dataclass
class Adam:
    """Keeps one moment pair per parameter name."""

    hyper: AdamHyper
    moments: dict[str, AdamMoments] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Update every parameter that has a gradient; the others are returned as-is."""
        updated = {}
        for name, value in params.items():
            grad = grads.get(name)
            if grad is None:
                updated[name] = value
                continue
            state = self.moments.get(name)
            if state is None:
                state = AdamMoments.zeros_like(value)
            updated[name], self.moments[name] = adam_update(value, grad, state, self.hyper)
        return updated
