from __future__ import annotations

import logging
import sys

from typing import Optional


__all__ = (
    "PlatoonLogger",
    "configure_logging",
    "getLogger",
)


ROOT_LOGGER_NAME = "hinfplatoon"
_LOG_FORMAT = "[%(asctime)s] %(levelname)s %(name)s: %(message)s"
_DATE_FORMAT = "%H:%M:%S"


class PlatoonLogger(logging.Logger):
    """
    Logger used across the package. Adds a separator helper for the command summaries.
    """

    def line(self, level: str = "info", *, char: str = "-", width: int = 60) -> None:
        """
        Logs a horizontal separator at the given level.
        """
        method = getattr(self, level.lower(), None)
        if method is None:
            raise ValueError(f"Invalid log level `{level}`.")
        method(char * width)


logging.setLoggerClass(PlatoonLogger)


def getLogger(name: Optional[str] = None) -> PlatoonLogger:
    """
    Returns a :class:`PlatoonLogger` nested under the package root logger.

    Module names from inside the package are used as they are; anything else is
    attached below the root so that one handler configuration covers it.
    """
    if name is None:
        name = ROOT_LOGGER_NAME
    elif not name.startswith(ROOT_LOGGER_NAME):
        name = f"{ROOT_LOGGER_NAME}.{name}"
    logger = logging.getLogger(name)
    if not isinstance(logger, PlatoonLogger):
        # created before our class was registered, e.g. by a third party
        logger.__class__ = PlatoonLogger
    return logger


def configure_logging(verbose: bool = False, *, stream=None) -> PlatoonLogger:
    """
    Installs a single stream handler on the package root logger.

    Parameters
    -----------
    verbose : bool
        Switch the level to DEBUG. Defaults to INFO.
    stream : Optional[IO]
        Where to write records. Defaults to `sys.stderr`.
    """
    root = getLogger(ROOT_LOGGER_NAME)
    for handler in list(root.handlers):
        if getattr(handler, "_hinfplatoon", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(logging.Formatter(_LOG_FORMAT, datefmt=_DATE_FORMAT))
    handler._hinfplatoon = True
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    return root
