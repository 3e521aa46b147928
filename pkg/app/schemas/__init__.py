"""Pydantic schemas for the domain types."""

from app.schemas.stage1 import (
    BetaModel,
    CentreYearSummary,
    CrudeEffect,
    ExclusionRecord,
    PatientRecord,
    ScoringResult,
)
from app.schemas.prior import (
    CovariatePrior,
    PosteriorSummary,
    PriorEstimate,
    PriorMethod,
    SensitivityRow,
)
from app.schemas.ranking import RankabilityReport, RankingRow
from app.schemas.longitudinal import (
    CovarianceStructure,
    ExtrapolatedModel,
    ExtrapolationKind,
    ExtrapolationPolicy,
    FitStats,
    LongitudinalModel,
    Panel,
    PredictiveDistribution,
)
from app.schemas.scenario import (
    PanelPrior,
    PatientCount,
    ScenarioConfig,
    SyntheticDataset,
    UnivariatePrior,
)
from app.schemas.run import InputMode, RunConfig

__all__ = [
    "BetaModel",
    "CentreYearSummary",
    "CrudeEffect",
    "ExclusionRecord",
    "PatientRecord",
    "ScoringResult",
    "CovariatePrior",
    "PosteriorSummary",
    "PriorEstimate",
    "PriorMethod",
    "SensitivityRow",
    "RankabilityReport",
    "RankingRow",
    "CovarianceStructure",
    "ExtrapolatedModel",
    "ExtrapolationKind",
    "ExtrapolationPolicy",
    "FitStats",
    "LongitudinalModel",
    "Panel",
    "PredictiveDistribution",
    "PanelPrior",
    "PatientCount",
    "ScenarioConfig",
    "SyntheticDataset",
    "UnivariatePrior",
    "InputMode",
    "RunConfig",
]
