"""simulate command: synthetic data sets from a scenario file."""

import logging

from app.core.exceptions import InputValidationError
from app.schemas.run import RunConfig
from app.services.profiling_service import crude_frame
from app.services.table_service import TableService
from estimation.simulation import simulate
from worker.data_handler import OutputWriter

logger = logging.getLogger(__name__)


def cmd_simulate(config: RunConfig) -> int:
    """
    Write crude.csv, truth.csv and, in patient mode, patients.csv.

    ``--seed`` overrides the scenario's seed.
    """
    if config.scenario_path is None:
        raise InputValidationError("--config with a scenario file is required")
    scenario = TableService.load_scenario(config.scenario_path)
    if config.seed is not None:
        scenario = scenario.model_copy(update={"seed": config.seed})

    dataset = simulate(scenario)
    writer = OutputWriter(config.out_dir, timestamp=config.timestamp)
    if dataset.patients is not None:
        writer.write_csv(dataset.patients, "patients.csv")
    writer.write_csv(crude_frame(dataset.crudes), "crude.csv")
    writer.write_csv(dataset.truth_frame(), "truth.csv")
    logger.info(
        f"Simulated {len(dataset.centres)} centres over {len(dataset.years)} years "
        f"({len(dataset.crudes)} crude effects)"
    )
    return 0
