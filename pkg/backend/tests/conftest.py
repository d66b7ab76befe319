"""
Shared fixtures: seeded generators, small embedding batches and tiny run configs.
"""
import numpy as np
import pytest

from app.models.batch import EmbeddingBatch, build_similarity_bundle
from app.models.experiment import MoGSpec
from app.models.run_config import ConditioningKind, RunConfig
from app.services.conditioning_losses import false_negative_mask
from app.services.mog_data import MixtureTask


def unit_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((rows, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def batch(rng):
    """Six unit embeddings over three classes, every class present twice."""
    y = np.array([0, 1, 2, 0, 1, 2])
    return EmbeddingBatch(unit_rows(rng, 6, 4), y, unit_rows(rng, 3, 4))


@pytest.fixture
def bundle(batch):
    return build_similarity_bundle(batch, false_negative_mask(batch.y))


@pytest.fixture
def tiny_config():
    """A few iterations of a small network; fast enough for every test run."""
    return RunConfig(
        batch_size=8,
        n_dis=2,
        total_iters=6,
        log_interval=3,
        hidden_dim=16,
        hidden_layers=2,
        embed_dim=8,
        z_dim=4,
        label_embed_dim=4,
        ema_start=2,
        ema_decay=0.9,
        cond_loss=ConditioningKind.D2DCE,
        seed=7,
    )


@pytest.fixture
def mog_task():
    return MixtureTask.from_spec(MoGSpec())


@pytest.fixture
def sharp_batch():
    """Coincident cross-label embeddings; at small temperatures the logits reach 1/tau."""
    f = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return EmbeddingBatch(f, np.array([0, 1, 1]), np.array([[1.0, 0.0], [0.0, 1.0]]))
