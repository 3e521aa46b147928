"""Schemas for the longitudinal two-stage model."""

from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class CovarianceStructure(str, Enum):
    """Covariance models for the true centre effects over the years."""

    UNSTRUCTURED = "unstructured"
    COMPOUND_SYMMETRY = "compound_symmetry"
    AR1 = "ar1"
    RANDOM_COEFFICIENTS = "random_coefficients"

    @classmethod
    def from_flag(cls, flag: str) -> "CovarianceStructure":
        aliases = {"cs": cls.COMPOUND_SYMMETRY, "rc": cls.RANDOM_COEFFICIENTS}
        return aliases.get(flag) or cls(flag)


class ExtrapolationKind(str, Enum):
    MANUAL = "manual"
    CARRY_LAST = "carry_last"
    LINEAR_TREND = "linear_trend"


class ExtrapolationPolicy(BaseModel):
    """How the mean is carried to the next year."""

    model_config = ConfigDict(frozen=True)

    kind: ExtrapolationKind = ExtrapolationKind.CARRY_LAST
    value: Optional[float] = None

    @classmethod
    def from_flag(cls, flag: str) -> "ExtrapolationPolicy":
        """Parse ``manual=<v>``, ``carry`` or ``trend``."""
        if flag.startswith("manual"):
            _, _, raw = flag.partition("=")
            return cls(kind=ExtrapolationKind.MANUAL, value=float(raw) if raw else None)
        if flag in ("carry", "carry_last"):
            return cls(kind=ExtrapolationKind.CARRY_LAST)
        if flag in ("trend", "linear_trend"):
            return cls(kind=ExtrapolationKind.LINEAR_TREND)
        raise ValueError(f"Unknown extrapolation policy: {flag}")


class Panel(BaseModel):
    """Centre x year matrix of crude effects with a missing mask."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    centres: List[str]
    years: List[int]
    theta_hat: np.ndarray
    s2: np.ndarray
    observed: np.ndarray

    @model_validator(mode="after")
    def check_layout(self) -> "Panel":
        shape = (len(self.centres), len(self.years))
        for name in ("theta_hat", "s2", "observed"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
        if not np.array_equal(np.isfinite(self.theta_hat), self.observed):
            raise ValueError("theta_hat missing mask differs from observed mask")
        if not np.array_equal(np.isfinite(self.s2), self.observed):
            raise ValueError("s2 missing mask differs from observed mask")
        if not self.observed.any(axis=1).all():
            raise ValueError("every centre needs at least one observed year")
        if list(self.years) != sorted(set(self.years)):
            raise ValueError("years must be strictly increasing")
        return self

    @property
    def n_centres(self) -> int:
        return len(self.centres)

    @property
    def n_years(self) -> int:
        return len(self.years)


class LongitudinalModel(BaseModel):
    """Fitted MVN(M, T) law of the true centre effects."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    structure: CovarianceStructure
    years: List[int]
    M: np.ndarray
    T: np.ndarray
    structure_params: Dict[str, float] = Field(default_factory=dict)
    log_likelihood: float
    n_mean_params: int
    n_cov_params: int
    time_origin: int = 0
    iterations: int = 0
    converged: bool = True
    at_boundary: bool = False
    psd_projected: bool = False
    loglik_trace: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_covariance(self) -> "LongitudinalModel":
        J = len(self.years)
        if self.M.shape != (J,) or self.T.shape != (J, J):
            raise ValueError(f"M and T must be sized for {J} years")
        if not np.allclose(self.T, self.T.T, atol=1e-12):
            raise ValueError("T must be symmetric")
        if np.linalg.eigvalsh(self.T).min() < -1e-10:
            raise ValueError("T must be positive semidefinite")
        if (np.diag(self.T) < 0).any():
            raise ValueError("diag(T) must be non-negative")
        return self

    @property
    def n_params(self) -> int:
        return self.n_mean_params + self.n_cov_params


class ExtrapolatedModel(BaseModel):
    """Model extended with the predicted year J+1."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    model: LongitudinalModel
    next_year: int
    mu_next: float
    M_extended: np.ndarray
    T_extended: np.ndarray
    policy: ExtrapolationPolicy

    @property
    def tau2_next(self) -> float:
        return float(self.T_extended[-1, -1])


class PredictiveDistribution(BaseModel):
    """Normal law of next year's centre effect given its history."""

    model_config = ConfigDict(frozen=True)

    centre_id: str
    mean: float
    variance: float = Field(..., ge=0)
    years_used: List[int] = Field(default_factory=list)


class FitStats(BaseModel):
    """Goodness of fit in both AIC conventions."""

    model_config = ConfigDict(frozen=True)

    log_likelihood: float
    aic: float
    aic_textbook: float
    n_params: int
