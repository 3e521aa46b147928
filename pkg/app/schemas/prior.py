"""Schemas for the normal mixing distribution and posterior summaries."""

from enum import Enum
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field


class PriorMethod(str, Enum):
    """Estimator used for (mu, tau2)."""

    MLE_EM = "MLE-EM"
    MOMENT = "moment"


class PriorEstimate(BaseModel):
    """Fitted N(mu, tau2) mixing distribution."""

    model_config = ConfigDict(frozen=True)

    mu: float
    tau2: float = Field(..., ge=0)
    method: PriorMethod
    log_likelihood: float
    iterations: int = 0
    at_boundary: bool = False
    converged: bool = True
    loglik_trace: List[float] = Field(default_factory=list)


class PosteriorSummary(BaseModel):
    """Posterior N(ebe, pv) of one centre effect."""

    model_config = ConfigDict(frozen=True)

    centre_id: str
    ebe: float
    pv: float = Field(..., ge=0)
    shrinkage: float = Field(..., ge=0, le=1)


class CovariatePrior(BaseModel):
    """Mixing distribution whose mean depends on centre-level covariates."""

    model_config = ConfigDict(frozen=True)

    gamma: List[float]
    tau2: float = Field(..., ge=0)
    covariate_names: List[str]
    log_likelihood: float
    iterations: int = 0
    at_boundary: bool = False
    centre_ids: List[str] = Field(default_factory=list)
    fitted_means: List[float] = Field(default_factory=list)
    posteriors: List[PosteriorSummary] = Field(default_factory=list)
    tolerance_intervals: List[Tuple[float, float]] = Field(default_factory=list)
    loglik_trace: List[float] = Field(default_factory=list)


class SensitivityRow(BaseModel):
    """Ranking measures recomputed at one fixed tau2."""

    model_config = ConfigDict(frozen=True)

    tau2: float
    mu: float
    ra: float
    centre_ids: List[str]
    epc: List[float]
