"""Stage-1 schemas: patient records, logistic fit, centre-year summaries."""

import math
from typing import Dict, List

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class PatientRecord(BaseModel):
    """One patient row of the patient CSV."""

    model_config = ConfigDict(frozen=True)

    centre_id: str
    year: int
    outcome: int = Field(..., ge=0, le=1)
    covariates: List[float] = Field(..., min_length=1)

    @field_validator("covariates")
    @classmethod
    def constant_first(cls, value: List[float]) -> List[float]:
        if value[0] != 1:
            raise ValueError("first covariate entry must be the constant 1")
        return value


class BetaModel(BaseModel):
    """Patient-mix logistic regression fitted without centre effects."""

    model_config = ConfigDict(frozen=True)

    coefficients: List[float]
    standard_errors: List[float]
    covariate_names: List[str]
    converged: bool
    iterations: int
    log_likelihood: float
    loglik_trace: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_dimensions(self) -> "BetaModel":
        if len(self.coefficients) != len(self.covariate_names):
            raise ValueError("coefficient length must equal covariate length")
        if self.converged and not math.isfinite(self.log_likelihood):
            raise ValueError("log-likelihood must be finite for a converged fit")
        return self


class CentreYearSummary(BaseModel):
    """Observed, expected and Bernoulli information for one centre-year."""

    model_config = ConfigDict(frozen=True)

    centre_id: str
    year: int
    n: int = Field(..., gt=0)
    observed: float = Field(..., ge=0)
    expected: float = Field(..., ge=0)
    information: float = Field(..., ge=0)

    @model_validator(mode="after")
    def check_bounds(self) -> "CentreYearSummary":
        slack = 1e-9 * max(1, self.n)
        if self.observed > self.n + slack or self.expected > self.n + slack:
            raise ValueError(f"O and E must not exceed n for centre {self.centre_id}")
        if self.information > self.n / 4 + slack:
            raise ValueError(f"information exceeds n/4 for centre {self.centre_id}")
        if self.information > min(self.expected, self.n - self.expected) + slack:
            raise ValueError(f"information exceeds min(E, n - E) for centre {self.centre_id}")
        return self


class CrudeEffect(BaseModel):
    """Score-statistic crude centre effect and its likelihood variance."""

    model_config = ConfigDict(frozen=True)

    centre_id: str
    year: int
    theta_hat: float
    s2: float = Field(..., gt=0)

    @field_validator("theta_hat", "s2")
    @classmethod
    def finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value


class ExclusionRecord(BaseModel):
    """A centre-year left out of the analysis, with the reason."""

    model_config = ConfigDict(frozen=True)

    centre_id: str
    year: int
    reason: str
    information: float


class ScoringResult(BaseModel):
    """Everything stage 1 produces for one stratum."""

    model_config = ConfigDict(frozen=True)

    betas: Dict[str, BetaModel]
    summaries: List[CentreYearSummary]
    crudes: List[CrudeEffect]
    exclusions: List[ExclusionRecord] = Field(default_factory=list)
