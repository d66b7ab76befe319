"""
Tests for bias-corrected Adam.
"""
import numpy as np
import pytest

from app.core.exceptions import ShapeError
from app.services.optimizer import Adam, AdamHyper, AdamMoments, adam_update


def test_first_step_moves_by_learning_rate():
    # bias correction makes the first step lr * sign(grad) (up to eps)
    hyper = AdamHyper(lr=0.1, eps=0.0)
    param = np.array([1.0, -2.0, 3.0])
    grad = np.array([0.5, -4.0, 1e-3])
    updated, moments = adam_update(param, grad, AdamMoments.zeros_like(param), hyper)
    np.testing.assert_allclose(updated, param - 0.1 * np.sign(grad), rtol=1e-12)
    assert moments.t == 1


def test_matches_reference_recursion(rng):
    hyper = AdamHyper(lr=0.01, beta1=0.9, beta2=0.99, eps=1e-8)
    param = rng.standard_normal(4)
    moments = AdamMoments.zeros_like(param)
    expected, m, v = param.copy(), np.zeros(4), np.zeros(4)
    for t in range(1, 6):
        grad = rng.standard_normal(4)
        param, moments = adam_update(param, grad, moments, hyper)
        m = 0.9 * m + 0.1 * grad
        v = 0.99 * v + 0.01 * grad ** 2
        expected = expected - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.99 ** t)) + 1e-8)
    np.testing.assert_allclose(param, expected, rtol=1e-12)
    assert moments.t == 5


def test_inputs_are_not_mutated():
    param = np.ones(2)
    moments = AdamMoments.zeros_like(param)
    adam_update(param, np.ones(2), moments, AdamHyper(lr=0.1))
    np.testing.assert_array_equal(param, 1.0)
    np.testing.assert_array_equal(moments.m, 0.0)
    assert moments.t == 0


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_update(np.ones(2), np.ones(3), AdamMoments.zeros_like(np.ones(2)), AdamHyper(lr=0.1))


def test_named_step_skips_missing_gradients():
    opt = Adam(AdamHyper(lr=0.1))
    params = {"a": np.ones(2), "b": np.ones(2)}
    updated = opt.step(params, {"a": np.ones(2), "b": None})
    assert updated["b"] is params["b"]
    assert "b" not in opt.moments
    assert opt.moments["a"].t == 1
    opt.step(updated, {"a": np.ones(2)})
    assert opt.moments["a"].t == 2


def test_zero_gradient_leaves_parameter_unchanged(rng):
    param = rng.standard_normal(5)
    updated, moments = adam_update(param, np.zeros(5), AdamMoments.zeros_like(param), AdamHyper(lr=0.1))
    np.testing.assert_array_equal(updated, param)
    assert moments.t == 1


def test_descends_a_parabola():
    hyper = AdamHyper(lr=0.1)
    x = np.array([1.0])
    moments = AdamMoments.zeros_like(x)
    history = [abs(x[0])]
    for _ in range(10):
        x, moments = adam_update(x, 2.0 * x, moments, hyper)
        history.append(abs(x[0]))
    assert all(later < earlier for earlier, later in zip(history, history[1:]))
