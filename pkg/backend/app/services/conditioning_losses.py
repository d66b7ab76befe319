"""
Conditioning losses for the discriminator.

All losses are built from ``app.core.ops`` primitives, so evaluating them
inside a recording CompGraph makes them differentiable. Batch-similarity
losses consume a SimilarityBundle so the loss and its analytic gradients
see the same floating-point similarities.
"""
import logging
from typing import Optional

import numpy as np

from app.core import ops
from app.core.tensor import RealArray, as_array
from app.models.batch import EmbeddingBatch, SimilarityBundle, validate_labels
from app.models.run_config import D2DCEParams

logger = logging.getLogger(__name__)


def false_negative_mask(y, drop_p: float = 0.0,
                        rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Valid-negative mask: different label, off-diagonal, kept by random drop.

    The random stream is only consumed when ``drop_p > 0``.
    """
    y = validate_labels(y)
    if not 0.0 <= drop_p <= 1.0:
        raise ValueError(f"drop_p must lie in [0, 1], got {drop_p}")
    mask = y[:, None] != y[None, :]
    if drop_p > 0.0:
        if rng is None:
            raise ValueError("a random generator is required when drop_p > 0")
        mask &= rng.random(mask.shape) >= drop_p
    return mask


def acgan_ce(logits, y) -> tuple[RealArray, np.ndarray]:
    """Mean negative log-probability of the true class, plus softmax probabilities."""
    logits = as_array(logits)
    log_probs = ops.log_softmax_rows(logits)
    picked = ops.take_per_row(log_probs, np.asarray(y))
    return -ops.mean(picked), np.exp(log_probs.data)


def feature_normalized_ce(batch: EmbeddingBatch, tau: float = 1.0) -> RealArray:
    """Cross-entropy on cosine logits f_i.v_j / tau."""
    logits = ops.scale(batch.f @ batch.v.T, 1.0 / tau)
    loss, _ = acgan_ce(logits, batch.y)
    return loss


def _log_denominator(a: RealArray, b: RealArray, mask: np.ndarray) -> RealArray:
    """log(e^{a_i} + sum_j mask_ij e^{b_ij}), shifted by each row's largest live logit.

    Masked-out entries are zeroed before exponentiating, so they neither overflow
    nor receive gradient.
    """
    live = np.where(mask, b.data, -np.inf).max(axis=1, initial=-np.inf)
    shift = np.maximum(a.data, live)
    weights = mask.astype(np.float64)
    head = ops.exp(a - shift)
    tail = ops.exp((b - shift[:, None]) * weights) * weights
    return ops.log(head + ops.sum(tail, axis=1)) + shift


def modified_ce(bundle: SimilarityBundle, tau: float) -> RealArray:
    """Data-to-data cross-entropy without margins."""
    a = ops.scale(bundle.s_pos, 1.0 / tau)
    b = ops.scale(bundle.s_neg, 1.0 / tau)
    return ops.mean(_log_denominator(a, b, bundle.neg_mask) - a)


def d2dce(bundle: SimilarityBundle, params: D2DCEParams) -> RealArray:
    """Data-to-data cross-entropy with positive and negative margins."""
    inv_tau = 1.0 / params.tau
    a = ops.scale(ops.clamp_nonpos(bundle.s_pos - params.m_p), inv_tau)
    b = ops.scale(ops.clamp_nonneg(bundle.s_neg - params.m_n), inv_tau)
    return ops.mean(_log_denominator(a, b, bundle.neg_mask) - a)


def d2dce_lower_bound(bundle: SimilarityBundle) -> float:
    """Global minimum (1/N) sum_i log(1 + |N(i)|) reached when every clamp is active."""
    return float(np.mean(np.log1p(bundle.negative_counts)))


def two_c_loss(bundle: SimilarityBundle, tau: float,
               include_false_negatives: bool = True) -> RealArray:
    """Conditional contrastive loss.

    The numerator pools the proxy with same-label samples; the denominator runs over
    the proxy and every other sample, or only over ``neg_mask`` when
    ``include_false_negatives`` is False.
    """
    a = ops.scale(bundle.s_pos, 1.0 / tau)
    b = ops.scale(bundle.s_neg, 1.0 / tau)
    others = bundle.offdiag_mask if include_false_negatives else bundle.neg_mask
    return ops.mean(_log_denominator(a, b, others) - _log_denominator(a, b, bundle.positive_mask))
