"""Logging setup for the command-line entry point."""

import logging
from typing import Union

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: Union[int, str] = "INFO", rich: bool = True) -> None:
    """Install a root handler for the ``xai_inversion`` loggers.

    Args:
        level: Log level name or number.
        rich: Use a ``rich`` handler with rich tracebacks; falls back to the
            plain format when rich is not importable.
    """
    if isinstance(level, str):
        level = getattr(logging, level.upper())

    if rich:
        try:
            from rich.logging import RichHandler

            logging.basicConfig(
                level=level,
                format="%(message)s",
                datefmt="[%X]",
                handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
                force=True,
            )
            return
        except ImportError:
            pass

    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
