"""Logging configuration with rotating file handlers."""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from pythonjsonlogger import jsonlogger

from app.config import get_settings

settings = get_settings()

MAX_LOG_BYTES = 10 * 1024 * 1024  # 10MB
LOG_BACKUPS = 5


def _file_formatter() -> logging.Formatter:
    """JSON records for log files, plain text when disabled."""
    if settings.LOG_JSON:
        return jsonlogger.JsonFormatter(
            "%(asctime)s %(name)s %(levelname)s %(funcName)s %(lineno)d %(message)s"
        )
    return logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s"
    )


def _log_path(log_dir: Optional[str]) -> Path:
    path = Path(log_dir or settings.LOG_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _rotating_handler(path: Path) -> RotatingFileHandler:
    handler = RotatingFileHandler(path, maxBytes=MAX_LOG_BYTES, backupCount=LOG_BACKUPS, encoding="utf-8")
    handler.setFormatter(_file_formatter())
    return handler


def setup_logging(log_dir: Optional[str] = None, verbose: bool = False) -> None:
    """
    Configure the root logger and the estimation engine logger.

    The console only shows warnings unless ``verbose`` is set; the log
    files always receive everything at LOG_LEVEL.
    """
    log_path = _log_path(log_dir)

    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG if verbose else getattr(logging, settings.LOG_LEVEL))
    root_logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.DEBUG if verbose else logging.WARNING)
    console_handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
    root_logger.addHandler(console_handler)

    app_handler = _rotating_handler(log_path / "app.log")
    app_handler.setLevel(logging.DEBUG)
    root_logger.addHandler(app_handler)

    # Engine records also go to their own file
    estimation_logger = logging.getLogger("estimation")
    estimation_logger.handlers.clear()
    estimation_logger.addHandler(_rotating_handler(log_path / "estimation.log"))


def setup_worker_logging(log_dir: Optional[str] = None) -> None:
    """Configure worker-specific logging."""
    worker_logger = logging.getLogger("worker")
    worker_logger.setLevel(getattr(logging, settings.LOG_LEVEL))
    worker_logger.handlers.clear()
    worker_logger.addHandler(_rotating_handler(_log_path(log_dir) / "worker.log"))
