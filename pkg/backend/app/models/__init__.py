"""Models package initialization."""
from app.models.run_config import AdversarialLossKind, ConditioningKind, D2DCEParams, MetricsRow, RunConfig

__all__ = ['AdversarialLossKind', 'ConditioningKind', 'D2DCEParams', 'MetricsRow', 'RunConfig']
