"""Simulation scenario schemas."""

from typing import List, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.stage1 import CrudeEffect


class PatientCount(BaseModel):
    """Patients per centre-year: fixed or Poisson distributed."""

    model_config = ConfigDict(frozen=True)

    distribution: Literal["fixed", "poisson"] = "poisson"
    mean: float = Field(..., gt=0)


class UnivariatePrior(BaseModel):
    """Independent N(mu, tau2) effects per year."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["univariate"] = "univariate"
    mu: Union[float, List[float]] = 0.0
    tau2: Union[float, List[float]] = Field(...)


class PanelPrior(BaseModel):
    """Correlated MVN(M, T) effects across the years."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["panel"] = "panel"
    M: List[float]
    T: List[List[float]]


class ScenarioConfig(BaseModel):
    """Parameters of one synthetic monitoring data set."""

    model_config = ConfigDict(frozen=True)

    n_centres: int = Field(..., gt=0)
    years: List[int] = Field(..., min_length=1)
    patients_per_centre_year: PatientCount
    baseline_rate: float = Field(..., gt=0, lt=1)
    covariate_effects: List[float] = Field(default_factory=list)
    prior: Union[UnivariatePrior, PanelPrior] = Field(..., discriminator="kind")
    mode: Literal["patient", "crude"] = "patient"
    seed: int = Field(..., ge=0, lt=2**64)

    @model_validator(mode="after")
    def check_prior(self) -> "ScenarioConfig":
        J = len(self.years)
        if isinstance(self.prior, PanelPrior):
            T = np.asarray(self.prior.T, dtype=float)
            if len(self.prior.M) != J or T.shape != (J, J):
                raise ValueError(f"panel prior must be sized for {J} years")
            if np.linalg.eigvalsh((T + T.T) / 2).min() < -1e-10:
                raise ValueError("panel prior covariance must be positive semidefinite")
        else:
            for name in ("mu", "tau2"):
                value = getattr(self.prior, name)
                if isinstance(value, list) and len(value) != J:
                    raise ValueError(f"prior {name} must have one entry per year")
            tau2 = np.atleast_1d(self.prior.tau2)
            if (tau2 < 0).any():
                raise ValueError("prior tau2 must be non-negative")
        return self


class SyntheticDataset(BaseModel):
    """Simulated truth plus the data an analyst would see."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    centres: List[str]
    years: List[int]
    true_effects: np.ndarray
    patients: Optional[pd.DataFrame] = None
    crudes: List[CrudeEffect] = Field(default_factory=list)

    def truth_frame(self) -> pd.DataFrame:
        """Long-format truth table, one row per centre x year."""
        rows = [
            {"centre_id": centre, "year": year, "theta": float(self.true_effects[i, j])}
            for i, centre in enumerate(self.centres)
            for j, year in enumerate(self.years)
        ]
        return pd.DataFrame(rows, columns=["centre_id", "year", "theta"])
