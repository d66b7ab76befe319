"""
Tests for the conditioning losses and the false-negative mask.
"""
import numpy as np
import pytest
from scipy.special import logsumexp

from app.core.exceptions import IndexRangeError, ShapeError
from app.models.batch import EmbeddingBatch, SimilarityBundle, build_similarity_bundle
from app.models.run_config import D2DCEParams
from app.services.conditioning_losses import (
    acgan_ce,
    d2dce,
    d2dce_lower_bound,
    false_negative_mask,
    feature_normalized_ce,
    modified_ce,
    two_c_loss,
)


def _reference_d2dce(bundle: SimilarityBundle, params: D2DCEParams) -> float:
    s, s_neg = bundle.s_pos.data, bundle.s_neg.data
    total = 0.0
    for i in range(bundle.num_samples):
        a = min(s[i] - params.m_p, 0.0) / params.tau
        terms = [a] + [max(s_neg[i, j] - params.m_n, 0.0) / params.tau
                       for j in np.flatnonzero(bundle.neg_mask[i])]
        total += logsumexp(terms) - a
    return total / bundle.num_samples


class TestFalseNegativeMask:
    def test_excludes_same_label_and_diagonal(self):
        mask = false_negative_mask(np.array([0, 1, 0]))
        expected = np.array([[False, True, False], [True, False, True], [False, True, False]])
        np.testing.assert_array_equal(mask, expected)

    def test_drop_zero_does_not_touch_rng(self):
        rng = np.random.default_rng(0)
        false_negative_mask(np.array([0, 1, 2]), drop_p=0.0, rng=rng)
        assert rng.random() == np.random.default_rng(0).random()

    def test_drop_one_leaves_no_negatives(self):
        mask = false_negative_mask(np.array([0, 1, 2, 3]), drop_p=1.0, rng=np.random.default_rng(0))
        assert not mask.any()

    def test_drop_needs_rng(self):
        with pytest.raises(ValueError):
            false_negative_mask(np.array([0, 1]), drop_p=0.5)

    def test_rejects_float_labels(self):
        with pytest.raises(ShapeError):
            false_negative_mask(np.array([0.0, 1.0]))

    def test_matches_pairwise_loop(self, rng):
        y = rng.integers(0, 4, size=16)
        expected = np.zeros((16, 16), dtype=bool)
        for i in range(16):
            for j in range(16):
                expected[i, j] = i != j and y[i] != y[j]
        np.testing.assert_array_equal(false_negative_mask(y), expected)


class TestAcganCE:
    def test_matches_log_softmax(self, rng):
        logits = rng.standard_normal((5, 3))
        y = np.array([0, 2, 1, 1, 0])
        loss, probs = acgan_ce(logits, y)
        expected = -np.mean(logits[np.arange(5), y] - logsumexp(logits, axis=1))
        assert loss.item() == pytest.approx(expected, rel=1e-12)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    @pytest.mark.parametrize("logits,expected", [
        ([[0.0, 0.0]], np.log(2.0)),
        ([[10.0, -10.0]], np.log1p(np.exp(-20.0))),
    ])
    def test_known_values(self, logits, expected):
        loss, _ = acgan_ce(np.array(logits), np.array([0]))
        assert loss.item() == pytest.approx(expected, rel=1e-6)

    def test_matches_double_loop(self, rng):
        logits = rng.standard_normal((8, 5))
        y = rng.integers(0, 5, size=8)
        total = 0.0
        for i in range(8):
            total -= logits[i, y[i]] - np.log(sum(np.exp(logits[i, k]) for k in range(5)))
        assert acgan_ce(logits, y)[0].item() == pytest.approx(total / 8, rel=1e-12)

    def test_label_out_of_range(self, rng):
        with pytest.raises(IndexRangeError):
            acgan_ce(rng.standard_normal((2, 3)), np.array([0, 3]))

    def test_feature_normalized_ce_uses_cosine_logits(self, batch):
        logits = batch.f.data @ batch.v.data.T / 0.5
        loss, _ = acgan_ce(logits, batch.y)
        assert feature_normalized_ce(batch, tau=0.5).item() == pytest.approx(loss.item(), rel=1e-12)

    def test_feature_normalized_ce_opposite_proxies(self):
        batch = EmbeddingBatch(np.array([[1.0, 0.0]]), np.array([0]), np.array([[1.0, 0.0], [-1.0, 0.0]]))
        expected = -np.log(np.e / (np.e + np.exp(-1.0)))
        assert feature_normalized_ce(batch).item() == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.1269, abs=1e-4)

    def test_feature_normalized_ce_identical_proxies(self, rng):
        f = rng.standard_normal((5, 3))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        batch = EmbeddingBatch(f, rng.integers(0, 4, size=5), np.tile([[0.0, 1.0, 0.0]], (4, 1)))
        assert feature_normalized_ce(batch).item() == pytest.approx(np.log(4.0), rel=1e-12)


class TestD2DCE:
    def test_matches_reference(self, bundle):
        params = D2DCEParams(tau=0.3, m_p=0.7, m_n=0.1)
        assert d2dce(bundle, params).item() == pytest.approx(_reference_d2dce(bundle, params), rel=1e-12)

    def test_defaults_resolve(self):
        params = D2DCEParams(tau=0.25, m_p=0.9)
        assert params.m_n == pytest.approx(0.1)
        assert params.lambda_ == 0.25

    def test_margins_must_be_ordered(self):
        with pytest.raises(ValueError):
            D2DCEParams(m_p=0.5, m_n=0.6)

    @pytest.mark.parametrize("m_p,m_n", [(0.2, 0.1), (0.5, 0.3), (0.98, 0.02)])
    def test_never_below_lower_bound(self, bundle, m_p, m_n):
        params = D2DCEParams(tau=0.5, m_p=m_p, m_n=m_n)
        assert d2dce(bundle, params).item() >= d2dce_lower_bound(bundle) - 1e-12

    def test_all_clamps_active_gives_log_one_plus_k(self):
        s_neg = np.full((3, 3), -0.5)
        np.fill_diagonal(s_neg, 1.0)
        bundle = SimilarityBundle(np.ones(3), s_neg, ~np.eye(3, dtype=bool), np.array([0, 1, 2]))
        assert d2dce(bundle, D2DCEParams(tau=0.1, m_p=0.9)).item() == pytest.approx(np.log(3.0), abs=1e-15)

    def test_small_temperature_stays_finite(self, sharp_batch):
        bundle = build_similarity_bundle(sharp_batch, false_negative_mask(sharp_batch.y))
        params = D2DCEParams(tau=1e-3, m_p=0.9, m_n=0.0)
        value = d2dce(bundle, params).item()
        assert np.isfinite(value)
        assert value == pytest.approx(_reference_d2dce(bundle, params), rel=1e-10)

    def test_no_negatives_and_easy_positives_gives_zero(self):
        bundle = SimilarityBundle(np.array([1.0, 0.99]), np.eye(2), np.zeros((2, 2), dtype=bool),
                                  np.array([0, 1]))
        params = D2DCEParams(tau=0.5, m_p=0.98)
        assert d2dce(bundle, params).item() == 0.0
        assert d2dce_lower_bound(bundle) == 0.0

    def test_bundle_rejects_same_label_negative(self):
        mask = np.array([[False, True], [True, False]])
        with pytest.raises(ValueError, match="same-label"):
            SimilarityBundle(np.array([0.5, 0.5]), np.eye(2), mask, np.array([1, 1]))

    def test_bundle_rejects_asymmetric_similarities(self):
        s_neg = np.array([[1.0, 0.2], [0.3, 1.0]])
        with pytest.raises(ValueError, match="symmetric"):
            SimilarityBundle(np.array([0.5, 0.5]), s_neg, np.zeros((2, 2), dtype=bool), np.array([0, 1]))

    def test_batch_rejects_non_unit_rows(self):
        with pytest.raises(ValueError, match="unit"):
            EmbeddingBatch(np.array([[2.0, 0.0]]), np.array([0]), np.array([[1.0, 0.0]]))


class TestModifiedCE:
    def test_shift_leaves_value_unchanged(self, bundle):
        tau = 0.4
        s, s_neg = bundle.s_pos.data, bundle.s_neg.data
        expected = np.mean([
            logsumexp(np.concatenate([[s[i] / tau], s_neg[i, bundle.neg_mask[i]] / tau])) - s[i] / tau
            for i in range(bundle.num_samples)
        ])
        assert modified_ce(bundle, tau).item() == pytest.approx(expected, rel=1e-12)

    def test_two_samples_one_negative_each(self):
        mask = np.array([[False, True], [True, False]])
        bundle = SimilarityBundle(np.ones(2), np.ones((2, 2)), mask, np.array([0, 1]))
        assert modified_ce(bundle, 1.0).item() == pytest.approx(np.log(2.0), rel=1e-12)

    def test_empty_negatives_contribute_zero(self):
        bundle = SimilarityBundle(np.array([0.3, -0.2]), np.eye(2), np.zeros((2, 2), dtype=bool),
                                  np.array([0, 0]))
        assert modified_ce(bundle, 0.1).item() == pytest.approx(0.0, abs=1e-15)

    def test_small_temperature_stays_finite(self, sharp_batch):
        bundle = build_similarity_bundle(sharp_batch, false_negative_mask(sharp_batch.y))
        value = modified_ce(bundle, 1e-3).item()
        assert np.isfinite(value) and value > 0.0


class TestTwoC:
    def test_false_negatives_change_denominator(self, bundle):
        with_fn = two_c_loss(bundle, 0.5).item()
        without_fn = two_c_loss(bundle, 0.5, include_false_negatives=False).item()
        assert with_fn != without_fn

    def test_distinct_labels_agree(self, rng):
        # with all labels distinct there are no false negatives to drop
        f = rng.standard_normal((3, 4))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        v = rng.standard_normal((3, 4))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        batch = EmbeddingBatch(f, np.array([0, 1, 2]), v)
        bundle = build_similarity_bundle(batch, false_negative_mask(batch.y))
        assert two_c_loss(bundle, 0.5).item() == two_c_loss(bundle, 0.5, include_false_negatives=False).item()

    def test_is_nonnegative(self, bundle):
        assert two_c_loss(bundle, 0.5).item() >= 0.0

    def test_same_label_pair_on_proxy_is_zero(self):
        batch = EmbeddingBatch(np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([0, 0]), np.array([[1.0, 0.0]]))
        bundle = build_similarity_bundle(batch, false_negative_mask(batch.y))
        assert two_c_loss(bundle, 1.0).item() == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("tau", [0.5, 1e-3])
    def test_matches_double_loop(self, sharp_batch, bundle, tau):
        for case in (bundle, build_similarity_bundle(sharp_batch, false_negative_mask(sharp_batch.y))):
            s, s_neg, y = case.s_pos.data, case.s_neg.data, case.labels
            n = case.num_samples
            total = 0.0
            for i in range(n):
                same = [s_neg[i, j] / tau for j in range(n) if j != i and y[j] == y[i]]
                others = [s_neg[i, j] / tau for j in range(n) if j != i]
                total += logsumexp([s[i] / tau] + others) - logsumexp([s[i] / tau] + same)
            value = two_c_loss(case, tau).item()
            assert np.isfinite(value)
            assert value == pytest.approx(total / n, rel=1e-10, abs=1e-9)
