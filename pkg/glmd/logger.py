"""Logging for the toolkit: one ``glmd`` package logger, module loggers below it.

Handlers live on the package logger only, so every ``glmd.*`` module logger
shares them.  The CLI calls :func:`configure_logging` with the subcommand so a
coordinator and its workers running side by side on one host write
``glmd-serve.log`` and ``glmd-work-<id>.log`` instead of interleaving in one
file.  Console output goes to stderr; stdout is reserved for command results.
"""

import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional

try:
    from dotenv import load_dotenv  # type: ignore
except ModuleNotFoundError:  # pragma: no cover

    def load_dotenv(*_args, **_kwargs):  # type: ignore
        return False


# GLMD_LOG_DIR / GLMD_LOG_LEVEL may come from .env; loaded before the first logger is built.
load_dotenv()

PACKAGE_LOGGER = "glmd"
LOG_FILE_STEM = "glmd"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def log_dir() -> str:
    return os.getenv("GLMD_LOG_DIR") or os.path.join(os.path.dirname(__file__), "logs")


def log_file_name(command: Optional[str] = None) -> str:
    """``glmd.log`` for library use, ``glmd-<command>.log`` under the CLI."""

    if not command:
        return f"{LOG_FILE_STEM}.log"
    safe = "".join(c if c.isalnum() or c in "-_" else "-" for c in command)
    return f"{LOG_FILE_STEM}-{safe}.log"


def _level(level: Optional[str]) -> int:
    name = (level or os.getenv("GLMD_LOG_LEVEL") or "INFO").upper()
    value = logging.getLevelName(name)
    return value if isinstance(value, int) else logging.INFO


def _build_handler(logs_dir: str, file_name: str) -> RotatingFileHandler:
    """Create a rotating file handler (10 MB * 5 backups)."""

    handler = RotatingFileHandler(
        os.path.join(logs_dir, file_name), maxBytes=10 * 1024 * 1024, backupCount=5, encoding="utf-8", delay=True
    )
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    return handler


def configure_logging(command: Optional[str] = None, level: Optional[str] = None) -> str:
    """(Re)attach the package handlers; return the path of the active log file.

    Calling it again replaces the file handler, so a process switches log files
    cleanly once it knows which subcommand it runs.
    """

    logs_dir = log_dir()
    os.makedirs(logs_dir, exist_ok=True)
    package = logging.getLogger(PACKAGE_LOGGER)
    for handler in list(package.handlers):
        package.removeHandler(handler)
        handler.close()

    package.setLevel(_level(level))
    file_handler = _build_handler(logs_dir, log_file_name(command))
    package.addHandler(file_handler)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    package.addHandler(console_handler)

    # Avoid double logging if the root logger is configured elsewhere.
    package.propagate = False
    return file_handler.baseFilename


def get_logger(name: str) -> logging.Logger:
    """Return the logger for module *name*, placed under the package logger.

    The package handlers are attached on first use; later calls (and the
    per-module loggers) reuse them.  ``__main__`` maps to ``glmd.main`` so
    running the CLI as a script logs the same way.
    """

    if name == "__main__":
        name = f"{PACKAGE_LOGGER}.main"
    elif name != PACKAGE_LOGGER and not name.startswith(PACKAGE_LOGGER + "."):
        name = f"{PACKAGE_LOGGER}.{name}"
    if not logging.getLogger(PACKAGE_LOGGER).handlers:
        configure_logging()
    return logging.getLogger(name)
