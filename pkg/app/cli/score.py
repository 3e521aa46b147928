"""score command: stage-1 crude effects per stratum."""

import logging

from app.core.exceptions import InputValidationError
from app.schemas.run import RunConfig
from app.services.table_service import TableService
from worker.main import exit_code, run_strata

logger = logging.getLogger(__name__)


def load_strata(config: RunConfig) -> list:
    if config.input_path is None:
        raise InputValidationError("--input is required")
    service = TableService(config.mode, config.stratify_by)
    return service.split_strata(service.load(config.input_path))


def cmd_score(config: RunConfig) -> int:
    """Write crude.csv (centre_id,year,theta_hat,s2) and companions per stratum."""
    results = run_strata("score", load_strata(config), config)
    for result in results:
        if not result.success:
            logger.error(f"score failed for stratum {result.name or 'all'}: {result.error}")
    return exit_code(results)
