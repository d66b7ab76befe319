"""
Adversarial objectives and the projection-discriminator term.
"""
from typing import Union

from app.core import ops
from app.core.exceptions import ShapeError, UnknownKindError
from app.core.tensor import RealArray, as_array
from app.models.run_config import AdversarialLossKind


def _kind(kind: Union[str, AdversarialLossKind]) -> AdversarialLossKind:
    try:
        return AdversarialLossKind(kind)
    except ValueError:
        raise UnknownKindError("adversarial loss", kind) from None


def _logits(name: str, logits) -> RealArray:
    logits = as_array(logits)
    if logits.ndim != 1:
        raise ShapeError(name, logits.shape, detail="expected one logit per sample")
    return logits


def discriminator_loss(kind, d_real, d_fake) -> RealArray:
    kind = _kind(kind)
    r, f = _logits("d_real", d_real), _logits("d_fake", d_fake)
    if kind is AdversarialLossKind.HINGE:
        return ops.mean(ops.clamp_nonneg(1.0 - r)) + ops.mean(ops.clamp_nonneg(1.0 + f))
    if kind is AdversarialLossKind.NON_SATURATION:
        # -log sigmoid(r) - log(1 - sigmoid(f))
        return ops.mean(ops.softplus(-r)) + ops.mean(ops.softplus(f))
    return ops.scale(ops.mean(ops.square(r - 1.0)) + ops.mean(ops.square(f)), 0.5)


def generator_loss(kind, d_fake) -> RealArray:
    kind = _kind(kind)
    f = _logits("d_fake", d_fake)
    if kind is AdversarialLossKind.HINGE:
        return -ops.mean(f)
    if kind is AdversarialLossKind.NON_SATURATION:
        return ops.mean(ops.softplus(-f))
    return ops.scale(ops.mean(ops.square(f - 1.0)), 0.5)


def adversarial_losses(kind, d_real, d_fake) -> tuple[RealArray, RealArray]:
    """(discriminator loss, generator loss) for one batch of logits."""
    return discriminator_loss(kind, d_real, d_fake), generator_loss(kind, d_fake)


def projection_term(embedding, class_embed) -> RealArray:
    """Inner product <embedding, class_embed>, row-wise for 2-D inputs."""
    embedding, class_embed = as_array(embedding), as_array(class_embed)
    if embedding.shape != class_embed.shape or embedding.ndim not in (1, 2):
        raise ShapeError("projection_term", embedding.shape, class_embed.shape)
    return ops.sum(embedding * class_embed, axis=embedding.ndim - 1)
