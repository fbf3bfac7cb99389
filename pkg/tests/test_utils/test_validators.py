"""Tests for validation utilities."""

import math

from porflow.utils.validators import (
    is_positive,
    is_time_multiple,
    is_unit_interval,
    is_valid_box,
    sanitize_name,
)


def test_is_positive() -> None:
    """Test positive finite values."""
    assert is_positive(1e-300)
    assert not is_positive(0.0)
    assert not is_positive(math.inf)
    assert not is_positive(math.nan)


def test_is_unit_interval() -> None:
    """Test the closed unit interval with optional slack."""
    assert is_unit_interval(0.0)
    assert is_unit_interval(1.0)
    assert not is_unit_interval(1.0 + 1e-9)
    assert is_unit_interval(1.0 + 1e-9, slack=1e-8)


def test_is_time_multiple() -> None:
    """Test integer multiples with floating point slack."""
    assert is_time_multiple(0.1, 0.01)
    assert is_time_multiple(0.3, 0.1)
    assert is_time_multiple(0.0, 0.5)
    assert not is_time_multiple(0.1, 0.03)
    assert not is_time_multiple(1.0, 0.0)
    assert not is_time_multiple(-1.0, 0.5)


def test_is_valid_box() -> None:
    """Test box length and ordering."""
    assert is_valid_box([0.0, 1.0, 0.5, 0.5], 2)
    assert not is_valid_box([0.0, 1.0, 0.5], 2)
    assert not is_valid_box([1.0, 0.0, 0.0, 1.0], 2)
    assert is_valid_box([0, 1, 0, 1, 0, 1], 3)


def test_sanitize_name() -> None:
    """Test preset names are normalized."""
    assert sanitize_name("  Quadratic_Linear ") == "quadratic-linear"
    assert sanitize_name("sine-anisotropic") == "sine-anisotropic"
