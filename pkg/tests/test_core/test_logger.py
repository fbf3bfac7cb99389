"""Tests for the package logger."""

import logging
import sys

from porflow.core.logger import logger, set_verbose


def test_handler_writes_to_stderr_with_line_numbers() -> None:
    """Test log records carry function and line and stay off stdout."""
    (handler,) = logger.handlers
    assert isinstance(handler, logging.StreamHandler)
    assert handler.stream is not sys.stdout
    assert handler.stream is not sys.__stdout__
    record = logging.LogRecord("porflow", logging.INFO, "solver.py", 42, "hello", None, None)
    record.funcName = "run"
    line = handler.format(record)
    assert "[porflow.run:42] hello" in line
    assert "INFO" in line


def test_set_verbose_switches_level() -> None:
    """Test --verbose maps to DEBUG and back to INFO."""
    try:
        set_verbose(True)
        assert logger.level == logging.DEBUG
        set_verbose(False)
        assert logger.level == logging.INFO
    finally:
        set_verbose(False)
