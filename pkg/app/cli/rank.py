"""rank command: univariate empirical Bayes ranking per stratum and year."""

import logging

import pandas as pd

from app.cli.score import load_strata
from app.schemas.run import RunConfig
from worker.data_handler import OutputWriter
from worker.main import exit_code, run_strata

logger = logging.getLogger(__name__)

OVERVIEW_COLUMNS = [
    "stratum", "year", "n_centres", "mean_patients", "event_rate", "mu", "tau2", "rho", "ra",
]


def cmd_rank(config: RunConfig) -> int:
    """
    Rank every stratum and write overview.csv across strata and years.

    Prints one summary line per stratum-year in the form
    ``stratum year: mu=..., tau2=..., rho=..., RA=...``.
    """
    results = run_strata("rank", load_strata(config), config)

    rows = []
    for result in results:
        if not result.success:
            logger.error(f"rank failed for stratum {result.name or 'all'}: {result.error}")
            continue
        for row in result.summary["overview"]:
            rows.append({"stratum": result.name or "all", **row})
            print(
                f"{result.name or 'all'} {row['year']}: mu={row['mu']:.4g}, tau2={row['tau2']:.4g}, "
                f"rho={row['rho']:.3f}, RA={row['ra']:.3f}"
            )

    if rows:
        OutputWriter(config.out_dir, timestamp=config.timestamp).write_csv(
            pd.DataFrame(rows, columns=OVERVIEW_COLUMNS), "overview.csv"
        )
    return exit_code(results)
