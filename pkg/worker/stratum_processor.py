"""Stratum processor - runs one command pipeline on one stratum."""

import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional

import pandas as pd
from pydantic import ValidationError

from app.core.exceptions import ProfilingError
from app.schemas.run import RunConfig
from app.services.profiling_service import PIPELINES
from worker.data_handler import OutputWriter

logger = logging.getLogger("worker")


@dataclass
class StratumResult:
    """Outcome of one stratum; failures carry the exit code of their error."""

    name: str
    success: bool
    exit_code: int = 0
    error: Optional[str] = None
    summary: dict = field(default_factory=dict)


class StratumProcessor:
    """
    Runs a command pipeline on one stratum and keeps its run log.

    Handles:
    - Creating the stratum output directory
    - Running the pipeline with a per-stratum log
    - Mapping domain errors to exit codes
    - Writing run.log next to the outputs
    """

    def __init__(self, command: str, config: RunConfig):
        if command not in PIPELINES:
            raise ValueError(f"Unknown command: {command}")
        self.command = command
        self.config = config
        self.logs: list = []

    def process(self, name: str, frame: Optional[pd.DataFrame]) -> StratumResult:
        """
        Process one stratum from start to finish.

        Args:
            name: Stratum name ("" for an unstratified run)
            frame: The stratum's rows, or None for fixture-only runs

        Returns:
            StratumResult with success flag, exit code and pipeline summary
        """
        label = name or "all"
        directory = Path(self.config.out_dir) / name if name else Path(self.config.out_dir)
        writer = OutputWriter(directory, timestamp=self.config.timestamp)
        self.logs = []
        self._log(f"{self.command} started for stratum {label}")
        logger.info(f"Processing stratum {label} ({self.command})")

        try:
            summary = PIPELINES[self.command](frame, self.config, writer, self._log)
            self._log(f"{self.command} finished: {len(writer.written)} file(s) written")
            result = StratumResult(name=name, success=True, summary=summary)
        except ProfilingError as e:
            logger.error(f"Stratum {label} failed: {e.message}")
            self._log(f"ERROR: {e.message}")
            result = StratumResult(name=name, success=False, exit_code=e.exit_code, error=e.message)
        except ValidationError as e:
            logger.error(f"Stratum {label} has invalid values: {e}")
            self._log(f"ERROR: {e}")
            result = StratumResult(name=name, success=False, exit_code=2, error=str(e))
        except Exception as e:
            logger.exception(f"Stratum {label} failed with exception")
            self._log(f"EXCEPTION: {str(e)}")
            result = StratumResult(name=name, success=False, exit_code=1, error=str(e))

        writer.write_log(self.logs)
        return result

    def _log(self, message: str) -> None:
        if self.config.timestamp:
            message = f"[{self._timestamp()}] {message}"
        self.logs.append(message)

    @staticmethod
    def _timestamp() -> str:
        """Get formatted timestamp for logs."""
        return datetime.now().strftime("%H:%M:%S.%f")[:-3]


def process_stratum(args: tuple) -> StratumResult:
    """
    Picklable entry point for the process pool.

    Args:
        args: (command, config, stratum name, stratum frame)
    """
    command, config, name, frame = args
    return StratumProcessor(command, config).process(name, frame)
