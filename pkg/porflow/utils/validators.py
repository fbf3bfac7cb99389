"""Validation utilities using pure functions."""

import math
from collections.abc import Sequence


def is_positive(value: float) -> bool:
    """Finite and strictly positive (pure function)."""
    return math.isfinite(value) and value > 0.0


def is_unit_interval(value: float, slack: float = 0.0) -> bool:
    """Value in [-slack, 1 + slack] (pure function)."""
    return -slack <= value <= 1.0 + slack


def is_time_multiple(t_final: float, dt: float, rtol: float = 1e-9) -> bool:
    """t_final is a nonnegative integer multiple of dt (pure function)."""
    if not (is_positive(dt) and math.isfinite(t_final) and t_final >= 0.0):
        return False
    n = round(t_final / dt)
    return abs(n * dt - t_final) <= rtol * max(t_final, dt)


def is_valid_box(box: Sequence[float], dim: int) -> bool:
    """Axis-aligned box ``[min_0, max_0, min_1, max_1, ...]`` with min <= max."""
    if len(box) != 2 * dim:
        return False
    return all(box[2 * k] <= box[2 * k + 1] for k in range(dim))


def sanitize_name(name: str) -> str:
    """Lowercase, dash-separated identifier for presets and problems."""
    return "-".join(name.strip().lower().replace("_", " ").split())
