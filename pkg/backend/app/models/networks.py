"""
Small MLP generator and discriminator built on the RealArray engine.

The discriminator exposes the split used by classifier-conditioned GANs:
feature extractor F, adversarial head, linear projection head P whose output
is row-normalized, class proxies (normalized at use), an unnormalized linear
classifier for plain ACGAN, a class-embedding table for the projection
discriminator, and an optional twin classifier head.
"""
import logging
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from app.core import ops
from app.core.checkpoint import load_checkpoint, save_checkpoint
from app.core.exceptions import CheckpointError, GraphError, IndexRangeError, NonFiniteError, ShapeError
from app.core.tensor import CompGraph, RealArray, as_array
from app.models.run_config import ConditioningKind, RunConfig
from app.services.adversarial_losses import projection_term

logger = logging.getLogger(__name__)


class Module:
    """Named parameter store; parameters are replaced, never mutated."""

    def __init__(self) -> None:
        self.params: dict[str, RealArray] = {}

    def _init_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = RealArray(value, requires_grad=True, name=name)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.numpy() for name, p in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        unexpected = set(state) - set(self.params)
        if missing or unexpected:
            raise CheckpointError(
                f"parameter names differ: missing={sorted(missing)} unexpected={sorted(unexpected)}"
            )
        for name, value in state.items():
            if np.shape(value) != self.params[name].shape:
                raise CheckpointError(f"{name}: shape {np.shape(value)} != {self.params[name].shape}")
            self._init_param(name, value)

    def replace_params(self, values: Mapping[str, np.ndarray]) -> None:
        """Install updated values for the named parameters."""
        for name, value in values.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter {name!r}")
            self._init_param(name, value)

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(load_checkpoint(path))

    def _affine(self, x: RealArray, prefix: str) -> RealArray:
        return x @ self.params[f"{prefix}.weight"] + self.params[f"{prefix}.bias"]

    def _init_affine(self, rng: np.random.Generator, prefix: str, fan_in: int, fan_out: int,
                     gain: float = 2.0) -> None:
        std = np.sqrt(gain / fan_in)
        self._init_param(f"{prefix}.weight", rng.normal(0.0, std, size=(fan_in, fan_out)))
        self._init_param(f"{prefix}.bias", np.zeros(fan_out))


@dataclass
class DiscriminatorOutput:
    adv_logits: RealArray                 # (N,)
    embeddings: RealArray                 # (N, e) unit rows
    features: RealArray                   # (N, d) raw F(x), possibly norm-clipped
    raw_feature_norms: np.ndarray         # (N,) ||F(x)|| before any clipping
    twin_logits: Optional[RealArray] = None


class Discriminator(Module):
    """F -> {adversarial head, projection head P, classifier, proxies, twin head}."""

    def __init__(self, data_dim: int, num_classes: int, config: RunConfig,
                 rng: np.random.Generator) -> None:
        super().__init__()
        self.data_dim = data_dim
        self.num_classes = num_classes
        self.hidden_layers = config.hidden_layers
        self.slope = config.leaky_slope
        self.cond_kind = config.cond_loss
        self.feature_clip = config.feature_clip
        self.tac_enabled = config.tac_enabled
        d, e = config.hidden_dim, config.embed_dim

        fan_in = data_dim
        for layer in range(config.hidden_layers):
            self._init_affine(rng, f"feature.{layer}", fan_in, d)
            fan_in = d
        self._init_affine(rng, "adv_head", d, 1, gain=1.0)
        self._init_affine(rng, "proj_head", d, e, gain=1.0)
        self._init_param("proxies", rng.normal(0.0, 1.0, size=(num_classes, e)))
        self._init_param("classifier", rng.normal(0.0, np.sqrt(1.0 / d), size=(d, num_classes)))
        self._init_param("class_embed", rng.normal(0.0, np.sqrt(1.0 / d), size=(num_classes, d)))
        if self.tac_enabled:
            self._init_affine(rng, "twin_head", d, num_classes, gain=1.0)

    @property
    def feature_dim(self) -> int:
        return self.params["feature.0.weight"].shape[1]

    def extract_features(self, x: RealArray) -> RealArray:
        h = x
        for layer in range(self.hidden_layers):
            h = ops.leaky_relu(self._affine(h, f"feature.{layer}"), self.slope)
        return h

    def forward(self, x, y=None, graph: Optional[CompGraph] = None) -> DiscriminatorOutput:
        """Adversarial logits, unit embeddings and raw feature norms for a batch.

        With ``graph`` the forward pass is recorded on it.
        """
        if graph is not None:
            with graph.record():
                return self.forward(x, y)
        x = as_array(x)
        if x.ndim != 2 or x.shape[1] != self.data_dim:
            raise ShapeError("discriminator_forward", x.shape, (x.shape[0], self.data_dim))

        features = self.extract_features(x)
        raw_norms = np.linalg.norm(features.data, axis=1)
        if self.feature_clip > 0:
            features = ops.clip_row_norms(features, self.feature_clip)

        adv = ops.reshape(self._affine(features, "adv_head"), (x.shape[0],))
        if self.cond_kind is ConditioningKind.PROJECTION:
            if y is None:
                raise ShapeError("discriminator_forward", x.shape, detail="projection needs labels")
            adv = adv + projection_term(features, ops.take_rows(self.params["class_embed"], np.asarray(y)))

        embeddings = ops.l2_normalize_rows(self._affine(features, "proj_head"))
        twin = self._affine(features, "twin_head") if self.tac_enabled else None
        return DiscriminatorOutput(adv, embeddings, features, raw_norms, twin)

    def normalized_proxies(self) -> RealArray:
        return ops.l2_normalize_rows(self.params["proxies"])

    def classifier_logits(self, features: RealArray) -> RealArray:
        return features @ self.params["classifier"]


class Generator(Module):
    """MLP on concat(z, label_embed[y]) -> sample space."""

    def __init__(self, data_dim: int, num_classes: int, config: RunConfig,
                 rng: np.random.Generator) -> None:
        super().__init__()
        self.data_dim = data_dim
        self.num_classes = num_classes
        self.z_dim = config.z_dim
        self.hidden_layers = config.hidden_layers
        self.slope = config.leaky_slope

        self._init_param("label_embed", rng.normal(0.0, 1.0, size=(num_classes, config.label_embed_dim)))
        fan_in = config.z_dim + config.label_embed_dim
        for layer in range(config.hidden_layers):
            self._init_affine(rng, f"trunk.{layer}", fan_in, config.hidden_dim)
            fan_in = config.hidden_dim
        self._init_affine(rng, "out", fan_in, data_dim, gain=1.0)

    def forward(self, z, y, graph: Optional[CompGraph] = None) -> RealArray:
        if graph is not None:
            with graph.record():
                return self.forward(z, y)
        z = as_array(z)
        y = np.asarray(y)
        if z.ndim != 2 or z.shape[1] != self.z_dim or y.shape != (z.shape[0],):
            raise ShapeError("generator_forward", z.shape, y.shape)
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            bad = int(y.min()) if y.min() < 0 else int(y.max())
            raise IndexRangeError("generator_forward", bad, self.num_classes)
        h = ops.concat_cols(z, ops.take_rows(self.params["label_embed"], y))
        for layer in range(self.hidden_layers):
            h = ops.leaky_relu(self._affine(h, f"trunk.{layer}"), self.slope)
        return self._affine(h, "out")


def discriminator_forward(model: Discriminator, x, y=None, record: bool = False,
                          graph: Optional[CompGraph] = None) -> DiscriminatorOutput:
    """Functional entry point; ``record`` needs the graph the caller will backpropagate through."""
    x = np.asarray(x.data if isinstance(x, RealArray) else x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("discriminator_forward")
    if record and graph is None:
        raise GraphError("discriminator_forward: record=True requires a graph")
    return model.forward(x, y, graph=graph)


def generator_forward(model: Generator, z, y, graph: Optional[CompGraph] = None) -> RealArray:
    return model.forward(z, y, graph=graph)
