"""Quadrature helpers shared by the physics and diagnostics services."""

from collections.abc import Callable
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_simpson


@lru_cache(maxsize=8)
def _legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


def gauss_legendre(
    func: Callable[[np.ndarray], np.ndarray],
    a: np.ndarray | float,
    b: np.ndarray | float,
    order: int = 8,
) -> np.ndarray:
    """Integrate ``func`` over every interval [a_i, b_i] at once.

    ``func`` must accept an array of any shape and act elementwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    nodes, weights = _legendre(order)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    points = mid[..., None] + half[..., None] * nodes
    return half * np.sum(weights * func(points), axis=-1)


def cumulative_integral(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Running integral of tabulated values, starting at zero (composite Simpson)."""
    return cumulative_simpson(values, x=grid, initial=0.0)


def uniform_grid(resolution: int) -> np.ndarray:
    """Uniform grid on [0, 1] with ``resolution`` points."""
    if resolution < 3:
        raise ValueError(f"Grid needs at least 3 points, got {resolution}")
    return np.linspace(0.0, 1.0, resolution)
