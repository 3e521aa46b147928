"""longitudinal command: multi-year models, extrapolation and predictions."""

import logging

from app.cli.score import load_strata
from app.schemas.run import RunConfig
from worker.main import exit_code, run_strata

logger = logging.getLogger(__name__)


def cmd_longitudinal(config: RunConfig) -> int:
    """Fit the requested structures per stratum; a model fixture replaces fitting."""
    if config.input_path is None and config.model_fixture is not None:
        strata = [("", None)]
    else:
        strata = load_strata(config)

    results = run_strata("longitudinal", strata, config)
    for result in results:
        if not result.success:
            logger.error(f"longitudinal failed for stratum {result.name or 'all'}: {result.error}")
            continue
        for structure, ra in result.summary["predictive_ra"].items():
            print(f"{result.name or 'all'} {structure}: predictive RA={ra:.3f}")
    return exit_code(results)
