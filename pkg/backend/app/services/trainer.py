"""
Alternating discriminator / generator training.

Each generator update is preceded by ``n_dis`` discriminator updates. The
discriminator's conditioning loss sees real samples only, the generator's
sees its own fakes only. Randomness comes from independent streams spawned
from the run seed, so toggling one feature (negative dropping, evaluation)
never shifts the draws of another.
"""
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import softmax

from app.core import ops
from app.core.checkpoint import save_checkpoint
from app.core.exceptions import NonFiniteError, TrainingDivergenceError
from app.core.tensor import CompGraph, RealArray
from app.models.batch import EmbeddingBatch, build_similarity_bundle
from app.models.networks import Discriminator, DiscriminatorOutput, Generator
from app.models.run_config import ConditioningKind, MetricsRow, RunConfig
from app.services import gradient_oracles
from app.services.adversarial_losses import discriminator_loss, generator_loss
from app.services.conditioning_losses import (
    acgan_ce,
    d2dce,
    false_negative_mask,
    feature_normalized_ce,
    modified_ce,
    two_c_loss,
)
from app.services.mog_data import MixtureTask
from app.services.optimizer import Adam, AdamHyper

logger = logging.getLogger(__name__)

RNG_STREAMS = ("init", "data", "noise", "mask", "eval")

Evaluator = Callable[["TrainingState"], dict[str, float]]


@dataclass
class TrainingState:
    config: RunConfig
    task: MixtureTask
    generator: Generator
    discriminator: Discriminator
    opt_d: Adam
    opt_g: Adam
    rngs: dict[str, np.random.Generator]
    ema: Optional[dict[str, np.ndarray]] = None
    iteration: int = 0
    d_steps_per_g: list[int] = field(default_factory=list)
    pending_d_steps: int = 0
    last: dict[str, float] = field(default_factory=dict)

    def eval_generator(self) -> Generator:
        """Generator carrying the EMA weights when EMA is on, else the live one."""
        if self.ema is None:
            return self.generator
        clone = Generator(self.task.data_dim, self.task.num_classes, self.config,
                          np.random.default_rng(0))
        clone.load_state_dict(self.ema)
        return clone

    def snapshot(self) -> dict[str, float]:
        stats = dict(self.last)
        stats["max_d_param_norm"] = max(float(np.linalg.norm(p.data)) for p in self.discriminator.params.values())
        stats["max_g_param_norm"] = max(float(np.linalg.norm(p.data)) for p in self.generator.params.values())
        return stats


@dataclass
class TrainingResult:
    state: TrainingState
    metrics: list[MetricsRow]
    wall_clock_s: float = 0.0


def initialize_state(config: RunConfig, task: MixtureTask) -> TrainingState:
    streams = np.random.SeedSequence(config.seed).spawn(len(RNG_STREAMS))
    rngs = {name: np.random.default_rng(seq) for name, seq in zip(RNG_STREAMS, streams)}
    generator = Generator(task.data_dim, task.num_classes, config, rngs["init"])
    discriminator = Discriminator(task.data_dim, task.num_classes, config, rngs["init"])
    return TrainingState(
        config=config,
        task=task,
        generator=generator,
        discriminator=discriminator,
        opt_d=Adam(AdamHyper(config.lr_d, config.beta1, config.beta2, config.adam_eps)),
        opt_g=Adam(AdamHyper(config.lr_g, config.beta1, config.beta2, config.adam_eps)),
        rngs=rngs,
        ema=generator.state_dict() if config.ema_enabled else None,
    )


def _conditioning_active(config: RunConfig) -> bool:
    return config.lam > 0 and config.cond_loss not in (ConditioningKind.NONE, ConditioningKind.PROJECTION)


def conditioning_loss(discriminator: Discriminator, out: DiscriminatorOutput, y: np.ndarray,
                      config: RunConfig, neg_mask: Optional[np.ndarray] = None) -> RealArray:
    """Conditioning loss of ``config.cond_loss`` on one discriminator pass."""
    kind = config.cond_loss
    if kind is ConditioningKind.ACGAN:
        loss, _ = acgan_ce(discriminator.classifier_logits(out.features), y)
        return loss
    batch = EmbeddingBatch(out.embeddings, y, discriminator.normalized_proxies())
    if kind is ConditioningKind.NORMALIZED_CE:
        return feature_normalized_ce(batch, config.tau)
    if neg_mask is None:
        neg_mask = false_negative_mask(y)
    bundle = build_similarity_bundle(batch, neg_mask)
    if kind is ConditioningKind.MODIFIED_CE:
        return modified_ce(bundle, config.tau)
    if kind is ConditioningKind.D2DCE:
        return d2dce(bundle, config.d2dce_params())
    if kind is ConditioningKind.TWO_C:
        return two_c_loss(bundle, config.tau)
    raise ValueError(f"conditioning kind {kind.value} has no separate loss")


def conditioning_diagnostics(discriminator: Discriminator, out: DiscriminatorOutput, y: np.ndarray,
                             config: RunConfig, neg_mask: Optional[np.ndarray] = None) -> dict[str, float]:
    """Classifier-path gradient norms and target probabilities for one real batch.

    ``max_embedding_grad_norm`` is the largest per-sample (N-scaled) gradient with
    respect to a sample's own embedding or raw feature.
    """
    kind = config.cond_loss
    n = y.shape[0]
    stats = {
        "mean_raw_feature_norm": float(out.raw_feature_norms.mean()),
        "mean_embedding_norm": float(np.linalg.norm(out.embeddings.data, axis=1).mean()),
        "mean_classifier_grad_norm": 0.0,
        "max_embedding_grad_norm": 0.0,
        "mean_target_probability": 0.0,
    }
    rows = np.arange(n)
    if kind is ConditioningKind.ACGAN:
        features = out.features.data
        weights = discriminator.params["classifier"].data
        probs = softmax(features @ weights, axis=1)
        grad_w = gradient_oracles.acgan_ce_grad_w(features, y, probabilities=probs)
        grad_f = gradient_oracles.acgan_ce_grad_features(features, y, weights)
        stats["mean_classifier_grad_norm"] = float(np.linalg.norm(grad_w, axis=0).mean())
        stats["max_embedding_grad_norm"] = float(n * np.linalg.norm(grad_f, axis=1).max())
        stats["mean_target_probability"] = float(probs[rows, y].mean())
        return stats
    if not kind.uses_proxies:
        return stats

    f = out.embeddings.numpy()
    v = discriminator.normalized_proxies().numpy()
    stats["mean_target_probability"] = float(softmax(f @ v.T / config.tau, axis=1)[rows, y].mean())
    present = np.unique(y)
    if kind in (ConditioningKind.D2DCE, ConditioningKind.TWO_C):
        batch = EmbeddingBatch(f, y, v)
        bundle = build_similarity_bundle(batch, false_negative_mask(y) if neg_mask is None else neg_mask)
        if kind is ConditioningKind.D2DCE:
            grads = gradient_oracles.d2dce_analytic_grads(bundle, config.d2dce_params(), batch)
        else:
            grads = gradient_oracles.two_c_grad_embedding(bundle, config.tau, batch)
        d_v, per_sample = grads.d_v, grads.anchor
    else:
        graph = CompGraph()
        f_leaf = RealArray(f, requires_grad=True)
        v_leaf = RealArray(v, requires_grad=True)
        with graph.record():
            batch = EmbeddingBatch(f_leaf, y, v_leaf)
            if kind is ConditioningKind.NORMALIZED_CE:
                loss = feature_normalized_ce(batch, config.tau)
            else:
                mask = false_negative_mask(y) if neg_mask is None else neg_mask
                loss = modified_ce(build_similarity_bundle(batch, mask), config.tau)
        graph.backward(loss)
        d_v, per_sample = graph.grad(v_leaf), graph.grad(f_leaf)
    stats["mean_classifier_grad_norm"] = float(np.linalg.norm(d_v[present], axis=1).mean())
    stats["max_embedding_grad_norm"] = float(n * np.linalg.norm(per_sample, axis=1).max())
    return stats


def _clip_columns(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norms = np.linalg.norm(grad, axis=0, keepdims=True)
    return grad * np.minimum(1.0, max_norm / np.maximum(norms, 1e-300))


def _sample_fake_inputs(state: TrainingState, n: int) -> tuple[np.ndarray, np.ndarray]:
    rng = state.rngs["noise"]
    z = rng.standard_normal((n, state.config.z_dim))
    y = rng.integers(0, state.task.num_classes, size=n)
    return z, y


def _mask(state: TrainingState, y: np.ndarray) -> np.ndarray:
    return false_negative_mask(y, state.config.mask_drop_p, state.rngs["mask"])


def _diverged(state: TrainingState, exc: Exception) -> TrainingDivergenceError:
    logger.error(f"Training diverged at iteration {state.iteration}: {exc}")
    return TrainingDivergenceError(state.iteration, state.snapshot(), reason=str(exc))


def train_step_discriminator(state: TrainingState, instrument: bool = False) -> dict[str, float]:
    """One discriminator update; returns the loss fragment of the next MetricsRow."""
    cfg, disc = state.config, state.discriminator
    n = cfg.batch_size
    x_real, y_real = state.task.sample(n, state.rngs["data"])
    z, y_fake = _sample_fake_inputs(state, n)
    try:
        x_fake = state.generator.forward(z, y_fake).data
        graph = CompGraph()
        with graph.record():
            out_real = disc.forward(x_real, y_real)
            out_fake = disc.forward(x_fake, y_fake)
            d_adv = discriminator_loss(cfg.adv_loss, out_real.adv_logits, out_fake.adv_logits)
            total = d_adv
            d_cond = 0.0
            neg_mask = None
            if _conditioning_active(cfg):
                if cfg.cond_loss.uses_batch_similarities:
                    neg_mask = _mask(state, y_real)
                cond = conditioning_loss(disc, out_real, y_real, cfg, neg_mask)
                d_cond = cond.item()
                total = total + ops.scale(cond, cfg.lam)
            if cfg.tac_enabled and cfg.lam > 0:
                twin, _ = acgan_ce(out_fake.twin_logits, y_fake)
                total = total + ops.scale(twin, cfg.lam)
        graph.backward(total)

        grads = {name: graph.grad(p) for name, p in disc.params.items()}
        if cfg.classifier_grad_clip > 0 and grads.get("classifier") is not None:
            grads["classifier"] = _clip_columns(grads["classifier"], cfg.classifier_grad_clip)
        fragment = {"d_adv_loss": d_adv.item(), "d_cond_loss": d_cond}
        if instrument:
            fragment.update(conditioning_diagnostics(disc, out_real, y_real, cfg, neg_mask))
        disc.replace_params(state.opt_d.step(disc.state_dict(), grads))
    except NonFiniteError as exc:
        raise _diverged(state, exc) from exc

    state.last.update(fragment)
    state.pending_d_steps += 1
    return fragment


def update_ema(ema: dict[str, np.ndarray], params: dict[str, np.ndarray], decay: float,
               active: bool) -> dict[str, np.ndarray]:
    """ema <- decay * ema + (1 - decay) * params once active, a plain copy before that."""
    if not active:
        return {name: value.copy() for name, value in params.items()}
    return {name: decay * ema[name] + (1.0 - decay) * value for name, value in params.items()}


def train_step_generator(state: TrainingState) -> dict[str, float]:
    cfg, gen, disc = state.config, state.generator, state.discriminator
    z, y_fake = _sample_fake_inputs(state, cfg.batch_size)
    try:
        graph = CompGraph()
        with graph.record():
            x_fake = gen.forward(z, y_fake)
            out = disc.forward(x_fake, y_fake)
            g_adv = generator_loss(cfg.adv_loss, out.adv_logits)
            total = g_adv
            g_cond = 0.0
            if _conditioning_active(cfg):
                neg_mask = _mask(state, y_fake) if cfg.cond_loss.uses_batch_similarities else None
                cond = conditioning_loss(disc, out, y_fake, cfg, neg_mask)
                g_cond = cond.item()
                total = total + ops.scale(cond, cfg.lam)
            if cfg.tac_enabled and cfg.lam > 0:
                twin, _ = acgan_ce(out.twin_logits, y_fake)
                total = total - ops.scale(twin, cfg.lam)
        graph.backward(total)
        grads = {name: graph.grad(p) for name, p in gen.params.items()}
        gen.replace_params(state.opt_g.step(gen.state_dict(), grads))
    except NonFiniteError as exc:
        raise _diverged(state, exc) from exc

    if state.ema is not None:
        state.ema = update_ema(state.ema, gen.state_dict(), cfg.ema_decay,
                               active=state.iteration >= cfg.ema_start)
    state.iteration += 1
    state.d_steps_per_g.append(state.pending_d_steps)
    state.pending_d_steps = 0
    fragment = {"g_adv_loss": g_adv.item(), "g_cond_loss": g_cond}
    state.last.update(fragment)
    return fragment


def save_training_checkpoints(state: TrainingState, directory: Path, prefix: str) -> list[Path]:
    """Write generator, discriminator and (when kept) EMA generator parameters."""
    stem = re.sub(r"[^A-Za-z0-9]+", "_", prefix).strip("_") or "run"
    directory = Path(directory)
    written = [
        save_checkpoint(directory / f"{stem}_generator.ckpt", state.generator.state_dict()),
        save_checkpoint(directory / f"{stem}_discriminator.ckpt", state.discriminator.state_dict()),
    ]
    if state.ema is not None:
        written.append(save_checkpoint(directory / f"{stem}_generator_ema.ckpt", state.ema))
    return written


def run_training(config: RunConfig, task: MixtureTask, evaluate: Optional[Evaluator] = None,
                 on_row: Optional[Callable[[MetricsRow], None]] = None,
                 checkpoint_dir: Optional[Path] = None, checkpoint_prefix: str = "run") -> TrainingResult:
    """Run ``total_iters`` generator updates, emitting a MetricsRow every ``log_interval``.

    With ``save_checkpoint`` set and a ``checkpoint_dir`` given, final parameters are saved.
    """
    start = time.perf_counter()
    state = initialize_state(config, task)
    metrics: list[MetricsRow] = []
    logger.info(
        f"Training {config.cond_loss.value} / {config.adv_loss.value} on {task.name} "
        f"for {config.total_iters} iterations (seed {config.seed})"
    )
    for _ in range(config.total_iters):
        log_now = (state.iteration + 1) % config.log_interval == 0
        for inner in range(config.n_dis):
            d_fragment = train_step_discriminator(state, instrument=log_now and inner == config.n_dis - 1)
        g_fragment = train_step_generator(state)
        if not log_now:
            continue
        row = MetricsRow(
            iter=state.iteration,
            **d_fragment,
            **g_fragment,
            eval=evaluate(state) if evaluate is not None else {},
        )
        metrics.append(row)
        if on_row is not None:
            on_row(row)
        logger.info(
            f"iter {row.iter}: d_adv={row.d_adv_loss:.4f} d_cond={row.d_cond_loss:.4f} "
            f"g_adv={row.g_adv_loss:.4f} |F(x)|={row.mean_raw_feature_norm:.3f} "
            f"p_target={row.mean_target_probability:.3f}"
        )
    if config.save_checkpoint and checkpoint_dir is not None:
        save_training_checkpoints(state, checkpoint_dir, checkpoint_prefix)
    return TrainingResult(state, metrics, time.perf_counter() - start)
