"""Command-line run configuration."""

import os
from enum import Enum
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.schemas.longitudinal import CovarianceStructure, ExtrapolationPolicy
from app.schemas.prior import PriorMethod


class InputMode(str, Enum):
    """Level of the input data."""

    PATIENT = "patient"
    SUMMARY = "summary"
    CRUDE = "crude"


class RunConfig(BaseModel):
    """Everything a command needs, validated once at the edge."""

    model_config = ConfigDict(frozen=True)

    input_path: Optional[Path] = None
    mode: InputMode = InputMode.PATIENT
    stratify_by: List[str] = Field(default_factory=list)
    estimator: PriorMethod = PriorMethod.MLE_EM
    structures: List[CovarianceStructure] = Field(
        default_factory=lambda: [CovarianceStructure.AR1]
    )
    extrapolation: Optional[ExtrapolationPolicy] = None
    level: float = Field(0.95, gt=0, lt=1)
    seed: Optional[int] = None
    out_dir: Path = Path("out")
    timestamp: bool = True
    beta_per_year: bool = False
    centre_covariates: Optional[Path] = None
    model_fixture: Optional[Path] = None
    scenario_path: Optional[Path] = None

    @field_validator("input_path", "centre_covariates", "model_fixture", "scenario_path")
    @classmethod
    def must_exist(cls, value: Optional[Path]) -> Optional[Path]:
        if value is not None and not value.is_file():
            raise ValueError(f"file not found: {value}")
        return value

    @field_validator("out_dir")
    @classmethod
    def writable(cls, value: Path) -> Path:
        value.mkdir(parents=True, exist_ok=True)
        if not os.access(value, os.W_OK):
            raise ValueError(f"output directory is not writable: {value}")
        return value
