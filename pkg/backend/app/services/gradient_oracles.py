"""
Closed-form gradients of the conditioning losses.

These are plain numpy evaluations of the derivative formulas, kept apart
from the autodiff engine so each can be checked against the other. Entry
gradients with respect to ``s_neg`` treat every matrix entry as an
independent variable; the embedding gradients account for ``s_neg = f f^T``.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import softmax

from app.core.exceptions import ShapeError
from app.models.batch import EmbeddingBatch, SimilarityBundle, validate_labels
from app.models.run_config import D2DCEParams


@dataclass(frozen=True)
class D2DCEGradients:
    d_pos: np.ndarray                          # dL/ds_i, (N,)
    d_neg: np.ndarray                          # dL/ds_ij, (N, N)
    attraction: Optional[np.ndarray] = None    # dL/ds_q * v_{y_q}, (N, e)
    repulsion: Optional[np.ndarray] = None     # sum_j dL/ds_qj * f_j, (N, e)
    anchor: Optional[np.ndarray] = None        # attraction + repulsion
    d_f: Optional[np.ndarray] = None           # full dL/df, (N, e)
    d_v: Optional[np.ndarray] = None           # dL/dv, (c, e)


@dataclass(frozen=True)
class TwoCGradients:
    d_pos: np.ndarray
    d_neg: np.ndarray
    attraction: np.ndarray
    repulsion: np.ndarray
    positive_samples: np.ndarray               # same-label pull inside the attraction term
    false_negative: np.ndarray                 # same-label push inside the repulsion term
    anchor: np.ndarray
    d_f: np.ndarray
    d_v: np.ndarray


def _embedding_terms(batch: EmbeddingBatch, d_pos: np.ndarray, d_neg: np.ndarray):
    f, v, y = batch.f.data, batch.v.data, batch.y
    attraction = d_pos[:, None] * v[y]
    repulsion = d_neg @ f
    d_f = attraction + repulsion + d_neg.T @ f
    d_v = np.zeros_like(v)
    np.add.at(d_v, y, d_pos[:, None] * f)
    return attraction, repulsion, d_f, d_v


def _row_weights(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Softmax over {a_i} and the live entries of row i of b: (e^{a_i}/C_i, e^{b_ij}/C_i)."""
    weights = softmax(np.column_stack([a, np.where(mask, b, -np.inf)]), axis=1)
    return weights[:, 0], weights[:, 1:]


def _check_batch(bundle: SimilarityBundle, batch: Optional[EmbeddingBatch]) -> None:
    if batch is not None and batch.num_samples != bundle.num_samples:
        raise ShapeError("gradient_oracle", (batch.num_samples,), (bundle.num_samples,))


def d2dce_analytic_grads(bundle: SimilarityBundle, params: D2DCEParams,
                         batch: Optional[EmbeddingBatch] = None) -> D2DCEGradients:
    """Similarity gradients of the margin loss and, given the batch, its embedding gradients.

    dL/ds_i  = (1/(tau N)) [s_i < m_p] (e^{a_i}/C_i - 1)
    dL/ds_ij = (1/(tau N)) [s_ij > m_n] [j in N(i)] e^{b_ij}/C_i
    with a_i = min(s_i - m_p, 0)/tau, b_ij = max(s_ij - m_n, 0)/tau and
    C_i = e^{a_i} + sum_{N(i)} e^{b_ij}.
    """
    _check_batch(bundle, batch)
    s, s_neg = bundle.s_pos.data, bundle.s_neg.data
    n = bundle.num_samples
    tau = params.tau
    unit = 1.0 / (tau * n)

    pos_active = s < params.m_p
    neg_active = (s_neg > params.m_n) & bundle.neg_mask
    w_a, w_b = _row_weights(np.minimum(s - params.m_p, 0.0) / tau,
                            np.maximum(s_neg - params.m_n, 0.0) / tau, bundle.neg_mask)

    d_pos = np.where(pos_active, unit * (w_a - 1.0), 0.0)
    d_neg = np.where(neg_active, unit * w_b, 0.0)
    if batch is None:
        return D2DCEGradients(d_pos, d_neg)
    attraction, repulsion, d_f, d_v = _embedding_terms(batch, d_pos, d_neg)
    return D2DCEGradients(d_pos, d_neg, attraction, repulsion, attraction + repulsion, d_f, d_v)


def two_c_grad_embedding(bundle: SimilarityBundle, tau: float, batch: EmbeddingBatch,
                         include_false_negatives: bool = True) -> TwoCGradients:
    """Embedding gradient of the conditional contrastive loss, split into its terms.

    With A_q = e^{a_q} + sum_{P(q)} e^{b_qj} and B_q = e^{a_q} + sum_{j != q} e^{b_qj}:
    attraction = -(1/(tau N)) [(e^{a_q} v + sum_P e^{b} f_j)/A_q - e^{a_q} v/B_q]
    repulsion  =  (1/(tau N)) sum_{j != q} e^{b} f_j / B_q
    """
    _check_batch(bundle, batch)
    s, s_neg = bundle.s_pos.data, bundle.s_neg.data
    f, v, y = batch.f.data, batch.v.data, batch.y
    n = bundle.num_samples
    unit = 1.0 / (tau * n)

    positives = bundle.positive_mask
    others = bundle.offdiag_mask if include_false_negatives else bundle.neg_mask
    false_negatives = positives & others
    # numerator weights e^{.}/A_q, denominator weights e^{.}/B_q
    num_a, num_b = _row_weights(s / tau, s_neg / tau, positives)
    den_a, den_b = _row_weights(s / tau, s_neg / tau, others)

    d_pos = unit * (den_a - num_a)
    d_neg = unit * (den_b - num_b)

    vy = v[y]
    positive_samples = -unit * (num_b @ f)
    attraction = -unit * (num_a - den_a)[:, None] * vy + positive_samples
    false_negative = unit * (np.where(false_negatives, den_b, 0.0) @ f)
    repulsion = unit * (den_b @ f)
    _, _, d_f, d_v = _embedding_terms(batch, d_pos, d_neg)
    return TwoCGradients(d_pos, d_neg, attraction, repulsion, positive_samples, false_negative,
                         attraction + repulsion, d_f, d_v)


def acgan_ce_grad_w(features, y, weights: Optional[np.ndarray] = None,
                    probabilities: Optional[np.ndarray] = None) -> np.ndarray:
    """dL/dW for softmax cross-entropy on raw features, one column per class.

    dL/dw_k = -(1/N) sum_i F(x_i) ([y_i = k] - p_ik). Pass ``probabilities`` to hold
    them fixed; otherwise they are computed from ``features @ weights``.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError("acgan_ce_grad_w", features.shape, detail="expected (N, d) features")
    if probabilities is None:
        if weights is None:
            raise ValueError("either weights or probabilities is required")
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[0] != features.shape[1]:
            raise ShapeError("acgan_ce_grad_w", features.shape, weights.shape)
        probabilities = softmax(features @ weights, axis=1)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.ndim != 2 or probabilities.shape[0] != features.shape[0]:
        raise ShapeError("acgan_ce_grad_w", features.shape, probabilities.shape)
    y = validate_labels(y, probabilities.shape[1])
    if y.shape[0] != features.shape[0]:
        raise ShapeError("acgan_ce_grad_w", features.shape, y.shape)
    residual = np.eye(probabilities.shape[1])[y] - probabilities
    return -(features.T @ residual) / features.shape[0]


def acgan_ce_grad_features(features, y, weights) -> np.ndarray:
    """dL/dF(x_i) = (1/N) (p_i - onehot(y_i)) W^T."""
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if features.ndim != 2 or weights.ndim != 2 or weights.shape[0] != features.shape[1]:
        raise ShapeError("acgan_ce_grad_features", features.shape, weights.shape)
    probabilities = softmax(features @ weights, axis=1)
    y = validate_labels(y, weights.shape[1])
    residual = probabilities - np.eye(weights.shape[1])[y]
    return residual @ weights.T / features.shape[0]
