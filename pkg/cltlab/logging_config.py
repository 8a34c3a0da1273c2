"""
Centralized logging configuration for cltlab.
Console output goes to stderr so that emitted tables on stdout stay machine-readable.
"""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

APP_LOGGER = "cltlab"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
CONSOLE_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s"


def _level(name: str) -> int:
    return getattr(logging, name.upper(), logging.INFO)


def _rotating(path: Path, level: int, max_bytes: int, backups: int) -> RotatingFileHandler:
    handler = RotatingFileHandler(path, maxBytes=max_bytes, backupCount=backups, encoding="utf-8")
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt=DATE_FORMAT))
    return handler


def setup_logging(log_level: str = "INFO", log_dir: Optional[str] = None) -> logging.Logger:
    """
    Configure the "cltlab" logger: a stderr console handler and, when log_dir is given,
    rotating cltlab.log (everything) and error.log (errors only).

    A second call only adjusts the level; handlers are never duplicated.

    Args:
        log_level: DEBUG, INFO, WARNING, ERROR or CRITICAL
        log_dir: Directory for log files; console only when None

    Returns:
        The application logger
    """
    logger = logging.getLogger(APP_LOGGER)
    level = _level(log_level)
    logger.setLevel(level)

    if logger.handlers:
        for handler in logger.handlers:
            if not isinstance(handler, RotatingFileHandler):
                handler.setLevel(level)
        return logger

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(level)
    console.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt=DATE_FORMAT))
    logger.addHandler(console)

    if log_dir:
        directory = Path(log_dir)
        directory.mkdir(parents=True, exist_ok=True)
        logger.addHandler(_rotating(directory / "cltlab.log", logging.DEBUG, 10_000_000, 5))
        logger.addHandler(_rotating(directory / "error.log", logging.ERROR, 5_000_000, 3))

    # pandas pulls in numexpr, which announces its thread count at INFO
    logging.getLogger("numexpr").setLevel(logging.WARNING)

    return logger


def get_logger(name: str = APP_LOGGER) -> logging.Logger:
    """Logger for one module, e.g. get_logger("cltlab.bridge_service")."""
    return logging.getLogger(name)
