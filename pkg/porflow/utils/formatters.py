"""Formatting utilities using pure functions."""

from collections.abc import Mapping
from typing import Any


def format_float(value: float, digits: int = 6) -> str:
    """Compact float for console output (pure function)."""
    return f"{value:.{digits}g}"


def format_verdict(passed: bool | None) -> str:
    """PASS / FAIL / n/a (pure function)."""
    if passed is None:
        return "n/a"
    return "PASS" if passed else "FAIL"


def format_key_values(values: Mapping[str, Any], width: int | None = None) -> list[str]:
    """Aligned ``key = value`` lines; floats get format_float."""
    width = width or max((len(key) for key in values), default=0)
    lines = []
    for key, value in values.items():
        text = format_float(value) if isinstance(value, float) else str(value)
        lines.append(f"{key:<{width}} = {text}")
    return lines


def format_step_name(step: int, n_steps: int) -> str:
    """Zero-padded step label used in output file names."""
    return f"{step:0{max(len(str(n_steps)), 4)}d}"
