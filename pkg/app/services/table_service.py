"""Input table loading, header validation and stratum splitting."""

import json
import logging
import re
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import pandas as pd
from pydantic import ValidationError

from app.core.exceptions import InputValidationError
from app.schemas.longitudinal import CovarianceStructure, LongitudinalModel
from app.schemas.run import InputMode
from app.schemas.scenario import ScenarioConfig
from app.schemas.stage1 import CentreYearSummary, CrudeEffect
from estimation.longitudinal import model_from_params

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS: Dict[InputMode, List[str]] = {
    InputMode.PATIENT: ["centre_id", "year", "outcome", "x1"],
    InputMode.SUMMARY: ["centre_id", "year", "n", "observed", "expected", "information"],
    InputMode.CRUDE: ["centre_id", "year", "theta_hat", "s2"],
}

ALL_STRATA = ""


class TableService:
    """Reads the CSV inputs of every command and turns rows into domain records."""

    def __init__(self, mode: InputMode, stratify_by: Sequence[str] = ()):
        self.mode = InputMode(mode)
        self.stratify_by = list(stratify_by)

    def load(self, path: Path) -> pd.DataFrame:
        """
        Read an input CSV and check its header.

        Raises:
            InputValidationError: unreadable file, bad or missing column
        """
        try:
            frame = pd.read_csv(path, dtype={"centre_id": str}, comment="#", float_precision="round_trip")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise InputValidationError(f"Cannot read {path}: {e}") from e

        for column in frame.columns:
            if not self.is_valid_column_name(str(column)):
                raise InputValidationError(f"Invalid column name '{column}' in {path}")
        self.check_header(list(frame.columns))
        if frame.empty:
            raise InputValidationError(f"{path} has no data rows")
        logger.info(f"Loaded {len(frame):,} rows from {path}")
        return frame

    def check_header(self, columns: Sequence[str]) -> None:
        for column in [*REQUIRED_COLUMNS[self.mode], *self.stratify_by]:
            if column not in columns:
                raise InputValidationError(
                    f"Missing required column '{column}' for {self.mode.value} input"
                )

    def split_strata(self, frame: pd.DataFrame) -> List[Tuple[str, pd.DataFrame]]:
        """
        Split a table into strata, ordered by stratum values.

        Stratum names are ``col=value`` pairs joined by ``__``; without
        stratification there is one stratum named "".
        """
        if not self.stratify_by:
            return [(ALL_STRATA, frame)]
        strata = []
        for values, group in frame.groupby(self.stratify_by, sort=True):
            values = values if isinstance(values, tuple) else (values,)
            name = "__".join(
                f"{column}={self.safe_label(value)}" for column, value in zip(self.stratify_by, values)
            )
            strata.append((name, group.drop(columns=self.stratify_by).reset_index(drop=True)))
        logger.info(f"Split input into {len(strata)} strata by {', '.join(self.stratify_by)}")
        return strata

    @staticmethod
    def summaries_from_frame(frame: pd.DataFrame) -> List[CentreYearSummary]:
        return _records(frame, CentreYearSummary, REQUIRED_COLUMNS[InputMode.SUMMARY])

    @staticmethod
    def crudes_from_frame(frame: pd.DataFrame) -> List[CrudeEffect]:
        return _records(frame, CrudeEffect, REQUIRED_COLUMNS[InputMode.CRUDE])

    @staticmethod
    def load_covariates(path: Path) -> pd.DataFrame:
        """Centre-level covariates: a centre_id column plus numeric columns."""
        try:
            frame = pd.read_csv(path, dtype={"centre_id": str}, comment="#", float_precision="round_trip")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise InputValidationError(f"Cannot read {path}: {e}") from e
        if "centre_id" not in frame.columns:
            raise InputValidationError(f"Missing required column 'centre_id' in {path}")
        if frame["centre_id"].duplicated().any():
            duplicate = frame.loc[frame["centre_id"].duplicated(), "centre_id"].iloc[0]
            raise InputValidationError(f"Centre {duplicate} appears twice in {path}")
        values = frame.set_index("centre_id")
        bad = [c for c in values.columns if not pd.api.types.is_numeric_dtype(values[c])]
        if bad:
            raise InputValidationError(f"Centre covariate column '{bad[0]}' is not numeric")
        return values

    @staticmethod
    def load_model_fixture(path: Path) -> LongitudinalModel:
        """
        Read a structured model from JSON instead of fitting it.

        Keys: structure, years, structure_params, log_likelihood and
        optionally M and time_origin.
        """
        try:
            raw = json.loads(Path(path).read_text())
            return model_from_params(
                CovarianceStructure.from_flag(raw["structure"]),
                raw["structure_params"],
                raw["years"],
                float(raw["log_likelihood"]),
                M=raw.get("M"),
                time_origin=raw.get("time_origin"),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise InputValidationError(f"Invalid model fixture {path}: {e}") from e

    @staticmethod
    def load_scenario(path: Path) -> ScenarioConfig:
        try:
            return ScenarioConfig.model_validate_json(Path(path).read_text())
        except ValidationError as e:
            raise InputValidationError(f"Invalid scenario {path}: {e}") from e

    @staticmethod
    def safe_label(value) -> str:
        """Directory-safe rendering of a stratum value."""
        return re.sub(r"[^A-Za-z0-9_.-]", "_", str(value))

    @staticmethod
    def is_valid_column_name(name: str) -> bool:
        """Validate column name."""
        pattern = r"^[a-zA-Z_][a-zA-Z0-9_]{0,62}$"
        return bool(re.match(pattern, str(name)))


def _records(frame: pd.DataFrame, model, columns: Sequence[str]) -> list:
    records = []
    for position, row in enumerate(frame[list(columns)].to_dict("records")):
        try:
            records.append(model(**row))
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(p) for p in first["loc"]) or "row"
            raise InputValidationError(
                f"Row {position + 1}, column '{field}': {first['msg']}"
            ) from e
    return records
