"""
Synthetic class-conditional Gaussian mixtures and the 1-D Wasserstein metric.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from app.models.experiment import MoGSpec

logger = logging.getLogger(__name__)


def sample_mog(spec: MoGSpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Labels by mixture weight, then x ~ Normal(mean_y, std_y)."""
    if n < 1:
        raise ValueError(f"sample count must be at least 1, got {n}")
    y = rng.choice(spec.num_classes, size=n, p=np.asarray(spec.weights))
    x = rng.normal(np.asarray(spec.means)[y], np.asarray(spec.stds)[y])
    return x, y.astype(np.int64)


def wasserstein1_1d(a, b) -> float:
    """Exact W1 between two empirical 1-D distributions."""
    a, b = np.ravel(np.asarray(a, dtype=np.float64)), np.ravel(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein1_1d needs two non-empty samples")
    return float(wasserstein_distance(a, b))


@dataclass(frozen=True)
class MixtureTask:
    """Isotropic Gaussian per class in ``data_dim`` dimensions; the trainer's data source."""

    means: np.ndarray      # (c, data_dim)
    stds: np.ndarray       # (c,)
    weights: np.ndarray    # (c,)
    name: str = "mixture"

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def data_dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        y = rng.choice(self.num_classes, size=n, p=self.weights)
        return self.sample_class(y, rng), y.astype(np.int64)

    def sample_class(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal((y.shape[0], self.data_dim))
        return self.means[y] + self.stds[y][:, None] * noise

    @classmethod
    def from_spec(cls, spec: MoGSpec) -> "MixtureTask":
        return cls(
            means=np.asarray(spec.means, dtype=np.float64)[:, None],
            stds=np.asarray(spec.stds, dtype=np.float64),
            weights=np.asarray(spec.weights, dtype=np.float64),
            name="mog_1d",
        )

    @classmethod
    def overlapped_circle(cls, num_classes: int = 50, radius: float = 1.0,
                          std: float = 0.3) -> "MixtureTask":
        """``num_classes`` equal-weight 2-D classes on a circle, packed so they overlap heavily."""
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return cls(
            means=means,
            stds=np.full(num_classes, std),
            weights=np.full(num_classes, 1.0 / num_classes),
            name=f"circle_{num_classes}",
        )


def marginal_w1(task: MixtureTask, fake: np.ndarray, real: np.ndarray) -> float:
    """W1 on the 1-D marginal, averaged over coordinates for higher-dimensional tasks."""
    fake, real = np.asarray(fake).reshape(-1, task.data_dim), np.asarray(real).reshape(-1, task.data_dim)
    return float(np.mean([wasserstein1_1d(fake[:, k], real[:, k]) for k in range(task.data_dim)]))
