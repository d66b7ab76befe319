"""
Tests for the mixture tasks and the 1-D Wasserstein distance.
"""
import numpy as np
import pytest
from pydantic import ValidationError

from app.models.experiment import MoGSpec
from app.services.mog_data import MixtureTask, marginal_w1, sample_mog, wasserstein1_1d


class TestWasserstein:
    def test_identical_samples(self, rng):
        a = rng.standard_normal(100)
        assert wasserstein1_1d(a, a[::-1]) == 0.0

    def test_shift(self):
        a = np.array([0.0, 1.0, 2.0])
        assert wasserstein1_1d(a, a + 0.5) == pytest.approx(0.5)

    def test_sorted_coupling_for_equal_sizes(self, rng):
        a, b = rng.standard_normal(50), rng.standard_normal(50) + 1.0
        assert wasserstein1_1d(a, b) == pytest.approx(np.mean(np.abs(np.sort(a) - np.sort(b))), rel=1e-12)

    def test_symmetric_and_unequal_sizes(self, rng):
        a, b = rng.standard_normal(30), rng.standard_normal(70)
        assert wasserstein1_1d(a, b) == pytest.approx(wasserstein1_1d(b, a), rel=1e-12)

    def test_empty_sample(self):
        with pytest.raises(ValueError):
            wasserstein1_1d([], [1.0])


class TestMoGSpec:
    def test_default_is_overlapped(self):
        spec = MoGSpec()
        assert spec.num_classes == 3
        assert spec.overlapped

    def test_separated_is_not_overlapped(self):
        assert not MoGSpec.separated().overlapped

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            MoGSpec(means=[0.0, 1.0], stds=[1.0, 1.0], weights=[0.5, 0.6])

    def test_lengths_must_match(self):
        with pytest.raises(ValidationError):
            MoGSpec(means=[0.0, 1.0], stds=[1.0], weights=[0.5, 0.5])

    def test_comma_separated_strings(self):
        spec = MoGSpec(means="0, 2", stds="1,1", weights="0.5, 0.5")
        assert spec.means == [0.0, 2.0]


class TestSampling:
    def test_sample_mog_is_seeded(self):
        spec = MoGSpec()
        x1, y1 = sample_mog(spec, 200, np.random.default_rng(3))
        x2, y2 = sample_mog(spec, 200, np.random.default_rng(3))
        np.testing.assert_array_equal(x1, x2)
        np.testing.assert_array_equal(y1, y2)
        assert set(np.unique(y1)) <= {0, 1, 2}

    def test_sample_mog_needs_samples(self, rng):
        with pytest.raises(ValueError):
            sample_mog(MoGSpec(), 0, rng)

    def test_class_means(self):
        task = MixtureTask.from_spec(MoGSpec.separated())
        x = task.sample_class(np.zeros(5000, dtype=np.int64), np.random.default_rng(0))
        assert x.shape == (5000, 1)
        assert abs(x.mean()) < 0.05

    def test_overlapped_circle(self):
        task = MixtureTask.overlapped_circle(50)
        assert task.num_classes == 50 and task.data_dim == 2
        np.testing.assert_allclose(np.linalg.norm(task.means, axis=1), 1.0)
        np.testing.assert_allclose(task.weights.sum(), 1.0)

    def test_marginal_w1_averages_coordinates(self, rng):
        task = MixtureTask.overlapped_circle(4)
        real = rng.standard_normal((100, 2))
        fake = real + np.array([0.2, 0.4])
        assert marginal_w1(task, fake, real) == pytest.approx(0.3)
