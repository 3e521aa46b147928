"""
Worker entry point - runs command pipelines over strata in parallel.

Strata are independent; results come back in stratum order whatever the
completion order.
"""

import logging
from multiprocessing import Pool, cpu_count
from typing import List, Optional, Sequence, Tuple

import pandas as pd

from app.config import get_settings
from app.schemas.run import RunConfig
from worker.stratum_processor import StratumResult, process_stratum

settings = get_settings()
logger = logging.getLogger("worker")


def run_strata(
    command: str,
    strata: Sequence[Tuple[str, Optional[pd.DataFrame]]],
    config: RunConfig,
    max_workers: Optional[int] = None,
) -> List[StratumResult]:
    """
    Run one command on every stratum.

    Uses a process pool when there is more than one stratum and more than
    one worker; otherwise strata run inline.

    Args:
        command: Pipeline name (score, rank or longitudinal)
        strata: (name, frame) pairs
        config: Validated run configuration
        max_workers: Pool size, defaults to MAX_CONCURRENT_STRATA

    Returns:
        One StratumResult per stratum, in input order
    """
    jobs = [(command, config, name, frame) for name, frame in strata]
    workers = min(max_workers or settings.MAX_CONCURRENT_STRATA, cpu_count(), len(jobs))
    logger.info(f"Running {command} on {len(jobs)} stratum(s) with {max(workers, 1)} worker(s)")

    if workers <= 1:
        results = [process_stratum(job) for job in jobs]
    else:
        with Pool(processes=workers) as pool:
            results = pool.map(process_stratum, jobs)

    for result in results:
        status = "SUCCESS" if result.success else f"FAILED (exit {result.exit_code})"
        logger.info(f"Stratum {result.name or 'all'}: {status}")
    return results


def exit_code(results: Sequence[StratumResult]) -> int:
    """0 when every stratum succeeded, else the highest failure code."""
    return max((r.exit_code for r in results), default=0)
