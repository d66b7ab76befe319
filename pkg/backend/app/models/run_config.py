"""
Run configuration models: loss kinds, D2D-CE hyperparameters and the
training hyperparameters consumed by the trainer.
"""
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class AdversarialLossKind(str, Enum):
    """Adversarial objective."""
    HINGE = "hinge"
    NON_SATURATION = "non_saturation"
    LEAST_SQUARES = "least_squares"


class ConditioningKind(str, Enum):
    """How the discriminator is conditioned on labels."""
    NONE = "none"
    ACGAN = "acgan"                  # softmax CE on raw features
    NORMALIZED_CE = "normalized_ce"  # CE on unit embeddings vs unit proxies
    MODIFIED_CE = "modified_ce"      # data-to-data CE, no margins
    D2DCE = "d2dce"                  # data-to-data CE with margins
    TWO_C = "two_c"                  # conditional contrastive loss
    PROJECTION = "projection"        # inner-product term on the adversarial logit

    @property
    def uses_proxies(self) -> bool:
        return self in (
            ConditioningKind.NORMALIZED_CE,
            ConditioningKind.MODIFIED_CE,
            ConditioningKind.D2DCE,
            ConditioningKind.TWO_C,
        )

    @property
    def uses_batch_similarities(self) -> bool:
        return self in (ConditioningKind.MODIFIED_CE, ConditioningKind.D2DCE, ConditioningKind.TWO_C)


class D2DCEParams(BaseModel):
    """Temperature, margins, balance coefficient and negative-drop probability."""
    model_config = ConfigDict(populate_by_name=True)

    tau: float = Field(0.5, gt=0)
    m_p: float = Field(0.98, gt=0, le=1)
    m_n: Optional[float] = Field(None, ge=0, lt=1)
    lambda_: Optional[float] = Field(None, alias="lambda", gt=0)
    mask_drop_p: float = Field(0.0, ge=0, le=1)

    @model_validator(mode="after")
    def _resolve_defaults(self):
        # m_n defaults to 1 - m_p, lambda defaults to tau
        if self.m_n is None:
            self.m_n = 1.0 - self.m_p
        if self.lambda_ is None:
            self.lambda_ = self.tau
        if not self.m_n < self.m_p:
            raise ValueError(f"margins must satisfy m_n < m_p (got m_n={self.m_n}, m_p={self.m_p})")
        return self


class RunConfig(BaseModel):
    """Hyperparameters of the alternating training loop."""
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    # Optimisation
    batch_size: int = Field(64, ge=2)
    lr_d: float = Field(2e-4, gt=0)
    lr_g: float = Field(2e-4, gt=0)
    beta1: float = Field(0.5, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    n_dis: int = Field(5, ge=1)
    total_iters: int = Field(20000, ge=0)
    log_interval: int = Field(100, ge=1)
    seed: int = Field(0, ge=0)

    # Losses
    adv_loss: AdversarialLossKind = AdversarialLossKind.HINGE
    cond_loss: ConditioningKind = ConditioningKind.D2DCE
    tac_enabled: bool = False

    # D2D-CE / conditioning strength
    tau: float = Field(0.5, gt=0)
    m_p: float = Field(0.98, gt=0, le=1)
    m_n: Optional[float] = Field(None, ge=0, lt=1)
    lambda_: Optional[float] = Field(None, alias="lambda", ge=0)
    mask_drop_p: float = Field(0.0, ge=0, le=1)

    # Generator EMA
    ema_enabled: bool = True
    ema_decay: float = Field(0.9999, ge=0, le=1)
    ema_start: int = Field(1000, ge=0)

    # Early-collapse prescriptions (0 disables)
    feature_clip: float = Field(0.0, ge=0)
    classifier_grad_clip: float = Field(0.0, ge=0)

    # Network sizes
    z_dim: int = Field(8, ge=1)
    hidden_dim: int = Field(128, ge=1)
    hidden_layers: int = Field(3, ge=1)
    embed_dim: int = Field(32, ge=1)
    label_embed_dim: int = Field(8, ge=1)
    leaky_slope: float = Field(0.2, ge=0, lt=1)

    save_checkpoint: bool = False

    @model_validator(mode="after")
    def _resolve_defaults(self):
        if self.m_n is None:
            self.m_n = 1.0 - self.m_p
        if self.lambda_ is None:
            self.lambda_ = self.tau
        if not self.m_n < self.m_p:
            raise ValueError(f"margins must satisfy m_n < m_p (got m_n={self.m_n}, m_p={self.m_p})")
        return self

    @property
    def lam(self) -> float:
        return float(self.lambda_)

    def d2dce_params(self) -> D2DCEParams:
        return D2DCEParams(
            tau=self.tau, m_p=self.m_p, m_n=self.m_n,
            lambda_=self.lambda_ if self.lambda_ > 0 else None,
            mask_drop_p=self.mask_drop_p,
        )

    def with_updates(self, **changes) -> "RunConfig":
        """Copy with field changes, re-validated."""
        data = self.model_dump(by_alias=False)
        data.update(changes)
        return RunConfig.model_validate(data)


class MetricsRow(BaseModel):
    """One logging-interval snapshot of a training run."""
    iter: int
    d_adv_loss: float
    d_cond_loss: float
    g_adv_loss: float
    g_cond_loss: float
    mean_raw_feature_norm: float
    mean_embedding_norm: float
    mean_classifier_grad_norm: float
    max_embedding_grad_norm: float
    mean_target_probability: float
    eval: dict[str, float] = Field(default_factory=dict)

    @field_validator(
        "d_adv_loss", "d_cond_loss", "g_adv_loss", "g_cond_loss",
        "mean_raw_feature_norm", "mean_embedding_norm", "mean_classifier_grad_norm",
        "max_embedding_grad_norm", "mean_target_probability",
    )
    @classmethod
    def _finite(cls, value: float) -> float:
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError("metrics must be finite")
        return value

    def flat(self) -> dict[str, float]:
        row = self.model_dump(exclude={"eval"})
        row.update({f"eval_{key}": value for key, value in self.eval.items()})
        return row
