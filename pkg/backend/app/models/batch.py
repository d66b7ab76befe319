"""
Batch containers shared by the conditioning losses and their gradient oracles.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from app.core import ops
from app.core.exceptions import IndexRangeError, ShapeError
from app.core.tensor import RealArray, as_array

UNIT_NORM_TOL = 1e-9
SIMILARITY_TOL = 1e-9


def validate_labels(y, num_classes: Optional[int] = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise ShapeError("labels", y.shape, detail="labels must be a 1-D integer vector")
    if y.size and y.min() < 0:
        raise IndexRangeError("labels", int(y.min()), num_classes or 0)
    if num_classes is not None and y.size and y.max() >= num_classes:
        raise IndexRangeError("labels", int(y.max()), num_classes)
    return y.astype(np.int64)


@dataclass(frozen=True)
class EmbeddingBatch:
    """Unit-norm sample embeddings ``f`` with labels ``y`` and unit-norm proxies ``v``."""

    f: RealArray
    y: np.ndarray
    v: RealArray

    def __post_init__(self):
        f, v = as_array(self.f), as_array(self.v)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "v", v)
        if f.ndim != 2 or v.ndim != 2 or f.shape[1] != v.shape[1]:
            raise ShapeError("EmbeddingBatch", f.shape, v.shape)
        object.__setattr__(self, "y", validate_labels(self.y, v.shape[0]))
        if self.y.shape[0] != f.shape[0]:
            raise ShapeError("EmbeddingBatch", f.shape, self.y.shape, detail="one label per embedding")
        for name, arr in (("f", f), ("v", v)):
            norms = np.linalg.norm(arr.data, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise ValueError(f"rows of {name} must have unit L2 norm")

    @classmethod
    def from_raw(cls, features, y, proxies) -> "EmbeddingBatch":
        """Normalize raw embeddings and proxies (differentiably) and wrap them."""
        return cls(ops.l2_normalize_rows(features), np.asarray(y), ops.l2_normalize_rows(proxies))

    @property
    def num_samples(self) -> int:
        return self.f.shape[0]

    @property
    def num_classes(self) -> int:
        return self.v.shape[0]


@dataclass(frozen=True)
class SimilarityBundle:
    """Positive similarities s_i, pairwise similarities s_ij and the valid-negative mask.

    ``labels`` is kept so losses that pool positives can recover them.
    """

    s_pos: RealArray
    s_neg: RealArray
    neg_mask: np.ndarray
    labels: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        s_pos, s_neg = as_array(self.s_pos), as_array(self.s_neg)
        object.__setattr__(self, "s_pos", s_pos)
        object.__setattr__(self, "s_neg", s_neg)
        n = s_pos.shape[0] if s_pos.ndim == 1 else -1
        if s_pos.ndim != 1 or s_neg.shape != (n, n):
            raise ShapeError("SimilarityBundle", s_pos.shape, s_neg.shape)
        mask = np.asarray(self.neg_mask, dtype=bool)
        labels = validate_labels(self.labels)
        if mask.shape != (n, n) or labels.shape != (n,):
            raise ShapeError("SimilarityBundle", s_neg.shape, mask.shape, labels.shape)
        object.__setattr__(self, "neg_mask", mask)
        object.__setattr__(self, "labels", labels)
        if self.validate:
            self._check_invariants()

    def _check_invariants(self) -> None:
        if np.any(np.diag(self.neg_mask)):
            raise ValueError("neg_mask diagonal must be False")
        same = self.labels[:, None] == self.labels[None, :]
        if np.any(self.neg_mask & same):
            raise ValueError("neg_mask marks a same-label pair as negative")
        s = self.s_neg.data
        if np.max(np.abs(s - s.T)) > 1e-12:
            raise ValueError("s_neg must be symmetric")
        for name, arr in (("s_pos", self.s_pos.data), ("s_neg", s)):
            if np.any(np.abs(arr) > 1.0 + SIMILARITY_TOL):
                raise ValueError(f"{name} similarities must lie in [-1, 1]")

    @property
    def num_samples(self) -> int:
        return self.s_pos.shape[0]

    @property
    def positive_mask(self) -> np.ndarray:
        """Same-label pairs excluding self."""
        same = self.labels[:, None] == self.labels[None, :]
        np.fill_diagonal(same, False)
        return same

    @property
    def offdiag_mask(self) -> np.ndarray:
        mask = np.ones((self.num_samples, self.num_samples), dtype=bool)
        np.fill_diagonal(mask, False)
        return mask

    @property
    def negative_counts(self) -> np.ndarray:
        return self.neg_mask.sum(axis=1)


def build_similarity_bundle(batch: EmbeddingBatch, neg_mask: np.ndarray) -> SimilarityBundle:
    """Compute s_i = f_i.v_{y_i} and s_ij = f_i.f_j once so every loss shares them."""
    return similarity_bundle_from_arrays(batch.f, batch.y, batch.v, neg_mask)


def similarity_bundle_from_arrays(f, y, v, neg_mask: np.ndarray,
                                  validate: bool = True) -> SimilarityBundle:
    """Same as ``build_similarity_bundle`` for arrays that need not be unit-norm.

    Finite-difference probes perturb ``f`` off the sphere and pass ``validate=False``.
    """
    f, v = as_array(f), as_array(v)
    s_pos = ops.sum(f * ops.take_rows(v, np.asarray(y)), axis=1)
    s_neg = f @ f.T
    return SimilarityBundle(s_pos, s_neg, neg_mask, y, validate=validate)
