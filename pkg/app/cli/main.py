"""
Command-line entry point.

Run with: python -m app.cli.main <command> [options]

Exit codes: 0 success, 2 input validation, 3 numerical failure, 1 anything else.
"""

import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

from pydantic import ValidationError

from app.cli.deps import build_config
from app.cli.longitudinal import cmd_longitudinal
from app.cli.rank import cmd_rank
from app.cli.score import cmd_score
from app.cli.simulate import cmd_simulate
from app.config import get_settings
from app.core.exceptions import ProfilingError
from app.core.logging_config import setup_logging, setup_worker_logging
from app.schemas.run import RunConfig

settings = get_settings()
logger = logging.getLogger(__name__)

COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "score": cmd_score,
    "rank": cmd_rank,
    "longitudinal": cmd_longitudinal,
    "simulate": cmd_simulate,
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default="out", help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Random seed")
    parser.add_argument("--level", type=float, default=settings.CONFIDENCE_LEVEL, help="Interval level")
    parser.add_argument("--no-timestamp", action="store_true", help="Omit generated_at headers and log times")
    parser.add_argument("--log-dir", default=None, help="Directory for application logs")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log debug output to stderr")


def _data(parser: argparse.ArgumentParser, input_required: bool = True) -> None:
    parser.add_argument("--input", required=input_required, help="Input CSV")
    parser.add_argument("--mode", choices=["patient", "summary", "crude"], default="patient")
    parser.add_argument("--stratify-by", default=None, help="Comma-separated stratum columns")
    parser.add_argument("--beta-per-year", action="store_true", help="Refit the risk model every year")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="centre-profiling",
        description=f"{settings.APP_NAME} v{settings.APP_VERSION}: empirical Bayes monitoring of centres",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    score = commands.add_parser("score", help="Stage-1 crude effects per centre and year")
    _data(score)
    _common(score)

    rank = commands.add_parser("rank", help="Empirical Bayes estimates, percentiles and rankability")
    _data(rank)
    rank.add_argument("--estimator", choices=["mle", "moment"], default="mle")
    rank.add_argument("--centre-covariates", default=None, help="CSV of centre-level covariates")
    _common(rank)

    panel = commands.add_parser("longitudinal", help="Multi-year models and next-year predictions")
    _data(panel, input_required=False)
    panel.add_argument("--structure", default="ar1", help="Comma list of unstructured, cs, ar1, rc")
    panel.add_argument("--extrapolate", default=None, help="manual=<v>, carry or trend")
    panel.add_argument("--model-fixture", default=None, help="JSON model used instead of fitting")
    _common(panel)

    simulate = commands.add_parser("simulate", help="Synthetic data from a scenario file")
    simulate.add_argument("--config", required=True, help="Scenario JSON file")
    _common(simulate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_dir, verbose=args.verbose)
    setup_worker_logging(args.log_dir)

    try:
        config = build_config(args)
        logger.info(f"Running {args.command} into {config.out_dir}")
        return COMMANDS[args.command](config)
    except ProfilingError as e:
        logger.error(e.message)
        print(f"error: {e.message}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"{args.command} crashed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
