"""Package logger for porflow.

Log records go to stderr so that command output on stdout (mesh reports,
convergence tables) stays machine readable.
"""

import logging
import sys

logger = logging.getLogger("porflow")
logger.setLevel(logging.INFO)
logger.propagate = False

_handler = logging.StreamHandler(sys.stderr)
_handler.setFormatter(
    logging.Formatter(
        "[%(asctime)s] %(levelname)-8s [%(name)s.%(funcName)s:%(lineno)d] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
)
logger.addHandler(_handler)


def set_verbose(verbose: bool) -> None:
    """Switch the package logger between INFO and DEBUG."""
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)


def log_step(step: int, **kwargs: object) -> None:
    """Log an accepted timestep."""
    details = " ".join(f"{key}={value}" for key, value in kwargs.items())
    logger.info(f"STEP [{step}] {details}")


def log_error(context: str, error: Exception) -> None:
    """Log errors with context; tracebacks only at DEBUG."""
    logger.error(
        f"ERROR in {context}: {type(error).__name__}: {error}",
        exc_info=logger.isEnabledFor(logging.DEBUG),
    )


def log_io(operation: str, **kwargs: object) -> None:
    """Log file operations."""
    logger.debug(f"IO [{operation}] {kwargs}")
