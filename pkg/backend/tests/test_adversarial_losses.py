"""
Tests for the adversarial objectives and the projection term.
"""
import numpy as np
import pytest

from app.core.exceptions import ShapeError, UnknownKindError
from app.core.tensor import CompGraph, RealArray
from app.models.run_config import AdversarialLossKind
from app.services.adversarial_losses import (
    adversarial_losses,
    discriminator_loss,
    generator_loss,
    projection_term,
)

REAL = np.array([2.0, 0.5, -1.0])
FAKE = np.array([-2.0, 0.0, 1.5])


def test_hinge_values():
    d_loss, g_loss = adversarial_losses("hinge", REAL, FAKE)
    # relu(1 - r) = [0, 0.5, 2]; relu(1 + f) = [0, 1, 2.5]
    assert d_loss.item() == pytest.approx(2.5 / 3 + 3.5 / 3)
    assert g_loss.item() == pytest.approx(-np.mean(FAKE))


def test_non_saturation_values():
    d_loss = discriminator_loss(AdversarialLossKind.NON_SATURATION, REAL, FAKE)
    g_loss = generator_loss(AdversarialLossKind.NON_SATURATION, FAKE)
    expected_d = np.mean(np.logaddexp(0.0, -REAL)) + np.mean(np.logaddexp(0.0, FAKE))
    assert d_loss.item() == pytest.approx(expected_d, rel=1e-12)
    assert g_loss.item() == pytest.approx(np.mean(np.logaddexp(0.0, -FAKE)), rel=1e-12)


def test_least_squares_values():
    d_loss, g_loss = adversarial_losses("least_squares", REAL, FAKE)
    assert d_loss.item() == pytest.approx(0.5 * (np.mean((REAL - 1) ** 2) + np.mean(FAKE ** 2)))
    assert g_loss.item() == pytest.approx(0.5 * np.mean((FAKE - 1) ** 2))


def test_non_saturation_is_stable_for_large_logits():
    d_loss = discriminator_loss("non_saturation", np.array([800.0]), np.array([-800.0]))
    assert d_loss.item() == pytest.approx(0.0, abs=1e-300)


def test_unknown_kind():
    with pytest.raises(UnknownKindError, match="wasserstein"):
        discriminator_loss("wasserstein", REAL, FAKE)


def test_logits_must_be_vectors():
    with pytest.raises(ShapeError):
        generator_loss("hinge", np.ones((2, 2)))


def test_hinge_generator_gradient():
    fake = RealArray(FAKE, requires_grad=True)
    graph = CompGraph()
    with graph.record():
        loss = generator_loss("hinge", fake)
    graph.backward(loss)
    np.testing.assert_allclose(graph.grad(fake), -np.ones(3) / 3)


def test_projection_term_row_wise(rng):
    embedding = rng.standard_normal((4, 3))
    class_embed = rng.standard_normal((4, 3))
    np.testing.assert_allclose(projection_term(embedding, class_embed).data,
                               np.sum(embedding * class_embed, axis=1))
    with pytest.raises(ShapeError):
        projection_term(embedding, class_embed[:2])
