"""
Experiment models: the 1-D mixture spec, per-experiment options and reports.
"""
from enum import Enum
from typing import Any, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from app.models.run_config import ConditioningKind, RunConfig


def _split_list(value):
    """Config files carry lists as comma-separated strings."""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ExperimentName(str, Enum):
    MOG = "mog"
    INSTABILITY = "instability"
    ABLATION = "ablation"


class MoGMethod(str, Enum):
    """Conditioning methods compared on the 1-D mixture."""
    ACGAN = "acgan"
    TACGAN = "tacgan"
    PROJECTION = "projection"
    TWO_C = "two_c"
    REACGAN = "reacgan"
    REACGAN_TAC = "reacgan_tac"

    def conditioning(self) -> tuple[ConditioningKind, bool]:
        """(conditioning kind, twin classifier enabled)."""
        return {
            MoGMethod.ACGAN: (ConditioningKind.ACGAN, False),
            MoGMethod.TACGAN: (ConditioningKind.ACGAN, True),
            MoGMethod.PROJECTION: (ConditioningKind.PROJECTION, False),
            MoGMethod.TWO_C: (ConditioningKind.TWO_C, False),
            MoGMethod.REACGAN: (ConditioningKind.D2DCE, False),
            MoGMethod.REACGAN_TAC: (ConditioningKind.D2DCE, True),
        }[self]


class InstabilityVariant(str, Enum):
    ACGAN = "acgan"
    NORMALIZED = "normalized"
    ACGAN_FEATURE_CLIP = "acgan_feature_clip"
    ACGAN_GRAD_CLIP = "acgan_grad_clip"
    ACGAN_LOW_LAMBDA = "acgan_low_lambda"
    D2DCE = "d2dce"


class MoGSpec(BaseModel):
    """Per-class Gaussian components of a 1-D mixture."""
    means: list[float] = Field(default_factory=lambda: [-1.0, 0.0, 1.0])
    stds: list[float] = Field(default_factory=lambda: [0.8, 0.8, 0.8])
    weights: list[float] = Field(default_factory=lambda: [1 / 3, 1 / 3, 1 / 3])

    @field_validator("means", "stds", "weights", mode="before")
    @classmethod
    def _split(cls, value):
        return _split_list(value)

    @model_validator(mode="after")
    def _check(self):
        if not (len(self.means) == len(self.stds) == len(self.weights)) or not self.means:
            raise ValueError("means, stds and weights must be non-empty and the same length")
        if any(std <= 0 for std in self.stds):
            raise ValueError("stds must be positive")
        if any(weight < 0 for weight in self.weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {sum(self.weights)!r})")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.means)

    @property
    def overlapped(self) -> bool:
        """Adjacent means closer than one combined standard deviation."""
        order = sorted(range(self.num_classes), key=lambda k: self.means[k])
        for left, right in zip(order, order[1:]):
            combined = (self.stds[left] ** 2 + self.stds[right] ** 2) ** 0.5
            if self.means[right] - self.means[left] <= combined:
                return True
        return False

    @classmethod
    def default_overlapped(cls) -> "MoGSpec":
        return cls()

    @classmethod
    def separated(cls) -> "MoGSpec":
        return cls(means=[0.0, 10.0], stds=[0.5, 0.5], weights=[0.5, 0.5])


class MoGOptions(BaseModel):
    method: MoGMethod
    num_seeds: int = Field(1, ge=1)
    eval_samples: int = Field(10000, ge=1)


class InstabilityOptions(BaseModel):
    variants: list[InstabilityVariant] = Field(
        default_factory=lambda: [InstabilityVariant.ACGAN, InstabilityVariant.NORMALIZED]
    )
    num_classes: int = Field(50, ge=2)
    num_seeds: int = Field(1, ge=1)
    eval_samples: int = Field(1000, ge=1)
    low_lambda: float = Field(0.25, gt=0)
    clip_feature_norm: float = Field(10.0, gt=0)
    clip_grad_norm: float = Field(1.0, gt=0)

    @field_validator("variants", mode="before")
    @classmethod
    def _split(cls, value):
        return _split_list(value)


class AblationOptions(BaseModel):
    p_values: list[float] = Field(default_factory=lambda: [1.0, 0.8, 0.6, 0.4, 0.2, 0.0])
    num_seeds: int = Field(1, ge=1)
    eval_samples: int = Field(10000, ge=1)

    @field_validator("p_values", mode="before")
    @classmethod
    def _split(cls, value):
        return _split_list(value)

    @field_validator("p_values")
    @classmethod
    def _in_unit_interval(cls, values: list[float]) -> list[float]:
        if not values or any(not 0.0 <= p <= 1.0 for p in values):
            raise ValueError("p_values must be a non-empty list within [0, 1]")
        return values


class SeedResult(BaseModel):
    """Outcome of one training run (one seed, one cell)."""
    label: str
    seed: int
    marginal_w1: Optional[float] = None
    per_class_w1: list[float] = Field(default_factory=list)
    diverged: bool = False
    diverged_at: Optional[int] = None
    divergence_reason: Optional[str] = None
    wall_clock_s: float = 0.0
    extras: dict[str, Any] = Field(default_factory=dict)

    @field_validator("marginal_w1")
    @classmethod
    def _nonnegative(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and value < 0:
            raise ValueError("distances must be non-negative")
        return value


class ExperimentReport(BaseModel):
    """Everything an experiment run produced; echoes the resolved config."""
    experiment: ExperimentName
    config: dict[str, str]
    seeds: list[int]
    results: list[SeedResult] = Field(default_factory=list)
    curves: list[dict[str, Any]] = Field(default_factory=list)
    summary: dict[str, Any] = Field(default_factory=dict)
    notes: list[str] = Field(default_factory=list)
    wall_clock_s: float = 0.0


class ExperimentConfig(BaseModel):
    """Resolved input of one experiment run: training hyperparameters, mixture and options."""
    experiment: ExperimentName
    run: RunConfig = Field(default_factory=RunConfig)
    mog: MoGSpec = Field(default_factory=MoGSpec)
    options: Union[MoGOptions, InstabilityOptions, AblationOptions]

    @property
    def uses_mixture_spec(self) -> bool:
        return self.experiment in (ExperimentName.MOG, ExperimentName.ABLATION)
