"""Output writer for stratum result files."""

import json
import logging
import re
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, List

import numpy as np
import pandas as pd

from app.config import get_settings

settings = get_settings()
logger = logging.getLogger("worker")


class OutputWriter:
    """
    Writes CSV and JSON result files into one output directory.

    Floats are written at OUTPUT_SIGNIFICANT_DIGITS significant digits so
    reruns are byte-identical; the optional first line
    ``# generated_at=<UTC timestamp>`` is the only varying content.
    """

    def __init__(self, directory: Path, timestamp: bool = True):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.timestamp = timestamp
        self.written: List[Path] = []

    @property
    def float_format(self) -> str:
        return f"%.{settings.OUTPUT_SIGNIFICANT_DIGITS}g"

    def write_csv(self, df: pd.DataFrame, name: str) -> Path:
        """
        Write a DataFrame as CSV.

        Args:
            df: Table to write
            name: File name inside the output directory

        Returns:
            Path of the written file

        Raises:
            ValueError: If a column name is invalid
        """
        for col in df.columns:
            if not self.is_valid_column_name(str(col)):
                raise ValueError(f"Invalid column name: {col}")

        path = self.directory / name
        body = df.to_csv(index=False, float_format=self.float_format, lineterminator="\n")
        path.write_text(self._header() + body, encoding="utf-8")
        self.written.append(path)
        logger.debug(f"Wrote {len(df)} rows to {path}")
        return path

    def write_json(self, payload: Any, name: str) -> Path:
        """Write a JSON document with floats rounded like the CSV files."""
        path = self.directory / name
        document = _round_floats(payload, settings.OUTPUT_SIGNIFICANT_DIGITS)
        if self.timestamp:
            document = {"generated_at": self.generated_at(), **document}
        path.write_text(json.dumps(document, indent=2, sort_keys=False) + "\n", encoding="utf-8")
        self.written.append(path)
        return path

    def write_log(self, lines: List[str], name: str = "run.log") -> Path:
        path = self.directory / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.written.append(path)
        return path

    def _header(self) -> str:
        return f"# generated_at={self.generated_at()}\n" if self.timestamp else ""

    @staticmethod
    def generated_at() -> str:
        return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")

    @staticmethod
    def is_valid_column_name(name: str) -> bool:
        """
        Validate column name format.

        Args:
            name: Column name to validate

        Returns:
            True if valid
        """
        pattern = r"^[a-zA-Z_][a-zA-Z0-9_]{0,62}$"
        return bool(re.match(pattern, name))


def _round_floats(value: Any, digits: int) -> Any:
    if isinstance(value, dict):
        return {k: _round_floats(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_floats(v, digits) for v in value]
    if isinstance(value, np.ndarray):
        return _round_floats(value.tolist(), digits)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not np.isfinite(value):
            return None
        return float(f"{value:.{digits}g}")
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value
