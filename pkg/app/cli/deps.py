"""Command dependencies: turn parsed arguments into a validated RunConfig."""

import argparse
from pathlib import Path
from typing import List

from pydantic import ValidationError

from app.core.exceptions import InputValidationError
from app.schemas.longitudinal import CovarianceStructure, ExtrapolationPolicy
from app.schemas.prior import PriorMethod
from app.schemas.run import RunConfig

ESTIMATORS = {"mle": PriorMethod.MLE_EM, "moment": PriorMethod.MOMENT}


def parse_structures(flag: str) -> List[CovarianceStructure]:
    """Comma-separated structure list, e.g. ``ar1,rc``."""
    try:
        return [CovarianceStructure.from_flag(part.strip()) for part in flag.split(",") if part.strip()]
    except ValueError as e:
        raise InputValidationError(f"Unknown covariance structure in '{flag}'") from e


def build_config(args: argparse.Namespace) -> RunConfig:
    """
    Validate command-line arguments once at the edge.

    Raises:
        InputValidationError: any invalid flag value or path
    """
    try:
        extrapolation = (
            ExtrapolationPolicy.from_flag(args.extrapolate) if getattr(args, "extrapolate", None) else None
        )
        return RunConfig(
            input_path=Path(args.input) if getattr(args, "input", None) else None,
            mode=getattr(args, "mode", "patient"),
            stratify_by=[c.strip() for c in (getattr(args, "stratify_by", None) or "").split(",") if c.strip()],
            estimator=ESTIMATORS[getattr(args, "estimator", "mle")],
            structures=parse_structures(getattr(args, "structure", None) or "ar1"),
            extrapolation=extrapolation,
            level=args.level,
            seed=args.seed,
            out_dir=Path(args.out),
            timestamp=not args.no_timestamp,
            beta_per_year=getattr(args, "beta_per_year", False),
            centre_covariates=_optional_path(getattr(args, "centre_covariates", None)),
            model_fixture=_optional_path(getattr(args, "model_fixture", None)),
            scenario_path=_optional_path(getattr(args, "config", None)),
        )
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise InputValidationError(f"Invalid value for {field}: {first['msg']}") from e
    except ValueError as e:
        raise InputValidationError(str(e)) from e


def _optional_path(value):
    return Path(value) if value else None
