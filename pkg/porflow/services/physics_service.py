"""Physics service: constitutive laws and the derived global-pressure functions.

Law objects are small frozen pydantic models acting elementwise on numpy
arrays. Everything else is a pure function of a FluidModel or of its
DerivedFunctions tables.
"""

from collections.abc import Callable
from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize_scalar

from porflow.core.errors import (
    CapillaryRangeError,
    ModelAssumptionError,
    ModelError,
    SaturationDomainError,
)
from porflow.core.logger import logger
from porflow.core.models import (
    DerivedFunctions,
    FluidModel,
    ModelAssumptions,
    Phase,
    PhaseProperties,
)
from porflow.utils.quadrature import cumulative_integral, gauss_legendre, uniform_grid

SATURATION_SLACK = 1e-12
CAPILLARY_CLAMP_RTOL = 1e-9
BISECTION_STEPS = 48
DEFAULT_RESOLUTION = 4096
FD_STEP = 1e-6

PRESETS = ("quadratic-linear", "constant-density")


class _Law(BaseModel):
    model_config = ConfigDict(frozen=True)


def _central_difference(
    func: Callable[[np.ndarray], np.ndarray], x: np.ndarray, lo: float = -np.inf, hi: float = np.inf
) -> np.ndarray:
    left = np.maximum(x - FD_STEP, lo)
    right = np.minimum(x + FD_STEP, hi)
    return (func(right) - func(left)) / (right - left)


# --- Relative permeabilities ---


class PowerRelPerm(_Law):
    """k_r(s) = scale * s^exponent on [0, 1], constant beyond."""

    exponent: float = Field(default=2.0, gt=0.0)
    scale: float = Field(default=1.0, gt=0.0)

    def __call__(self, s: ArrayLike) -> np.ndarray:
        return self.scale * np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0) ** self.exponent

    def derivative(self, s: ArrayLike) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        inside = (s > 0.0) & (s < 1.0)
        base = np.where(inside, s, 0.5)
        return np.where(inside, self.scale * self.exponent * base ** (self.exponent - 1.0), 0.0)


class CallableRelPerm(_Law):
    """User relative permeability; derivative by central differences."""

    func: Callable[[np.ndarray], np.ndarray]

    def __call__(self, s: ArrayLike) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0)
        return np.asarray(self.func(s), dtype=np.float64) * np.ones_like(s)

    def derivative(self, s: ArrayLike) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        inside = (s >= 0.0) & (s <= 1.0)
        return np.where(inside, _central_difference(self, np.clip(s, 0.0, 1.0), 0.0, 1.0), 0.0)


# --- Capillary pressure ---


class LinearCapillary(_Law):
    """p_c(s) = p_max (1 - s)."""

    p_max: float = Field(default=1.0, gt=0.0)

    def __call__(self, s: ArrayLike) -> np.ndarray:
        return self.p_max * (1.0 - np.asarray(s, dtype=np.float64))

    def derivative(self, s: ArrayLike) -> np.ndarray:
        return np.full_like(np.asarray(s, dtype=np.float64), -self.p_max)

    def inverse(self, value: ArrayLike) -> np.ndarray:
        return 1.0 - np.asarray(value, dtype=np.float64) / self.p_max


class CallableCapillary(_Law):
    """User capillary pressure, strictly decreasing on [0, 1]."""

    func: Callable[[np.ndarray], np.ndarray]

    def __call__(self, s: ArrayLike) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        return np.asarray(self.func(s), dtype=np.float64) * np.ones_like(s)

    def derivative(self, s: ArrayLike) -> np.ndarray:
        return _central_difference(self, np.asarray(s, dtype=np.float64), 0.0, 1.0)


# --- Densities ---


class ConstantDensity(_Law):
    """Incompressible phase."""

    rho: float = Field(default=1.0, gt=0.0)

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.rho, self.rho)

    def __call__(self, p: ArrayLike) -> np.ndarray:
        return np.full_like(np.asarray(p, dtype=np.float64), self.rho)

    def derivative(self, p: ArrayLike) -> np.ndarray:
        return np.zeros_like(np.asarray(p, dtype=np.float64))

    def inverse_integral(self, p: ArrayLike) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) / self.rho


class ExponentialDensity(_Law):
    """rho(p) = clamp(rho_ref exp(p / pressure_scale), rho_min, rho_max)."""

    rho_ref: float = Field(default=1.0, gt=0.0)
    pressure_scale: float = Field(default=10.0, gt=0.0)
    rho_min: float = Field(default=0.5, gt=0.0)
    rho_max: float = Field(default=2.0, gt=0.0)

    @model_validator(mode="after")
    def _ordered_bounds(self) -> "ExponentialDensity":
        if not self.rho_min < self.rho_max:
            raise ValueError("rho_min must be smaller than rho_max")
        return self

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.rho_min, self.rho_max)

    @property
    def breakpoints(self) -> tuple[float, float]:
        c = self.pressure_scale
        return (c * np.log(self.rho_min / self.rho_ref), c * np.log(self.rho_max / self.rho_ref))

    def __call__(self, p: ArrayLike) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        lo, hi = self.breakpoints
        return self.rho_ref * np.exp(np.clip(p, lo, hi) / self.pressure_scale)

    def derivative(self, p: ArrayLike) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        lo, hi = self.breakpoints
        return np.where((p > lo) & (p < hi), self(p) / self.pressure_scale, 0.0)

    def _antiderivative(self, p: np.ndarray) -> np.ndarray:
        lo, hi = self.breakpoints
        c = self.pressure_scale

        def core(q: np.ndarray | float) -> np.ndarray:
            return -(c / self.rho_ref) * np.exp(-np.asarray(q) / c)

        inside = core(np.clip(p, lo, hi))
        return (
            inside
            + np.minimum(p - lo, 0.0) / self.rho_min
            + np.maximum(p - hi, 0.0) / self.rho_max
        )

    def inverse_integral(self, p: ArrayLike) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return self._antiderivative(p) - self._antiderivative(np.zeros(()))


class CallableDensity(_Law):
    """User density law clamped to [rho_min, rho_max]."""

    func: Callable[[np.ndarray], np.ndarray]
    rho_min: float = Field(gt=0.0)
    rho_max: float = Field(gt=0.0)

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.rho_min, self.rho_max)

    def __call__(self, p: ArrayLike) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        values = np.asarray(self.func(p), dtype=np.float64) * np.ones_like(p)
        return np.clip(values, self.rho_min, self.rho_max)

    def derivative(self, p: ArrayLike) -> np.ndarray:
        return _central_difference(self, np.asarray(p, dtype=np.float64))

    def inverse_integral(self, p: ArrayLike) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        # Split [0, p] into panels of fixed width so steep laws stay resolved
        panels = 16
        edges = p[..., None] * np.linspace(0.0, 1.0, panels + 1)
        return np.sum(
            gauss_legendre(lambda q: 1.0 / self(q), edges[..., :-1], edges[..., 1:]), axis=-1
        )


# --- Fluid model construction ---


def create_fluid_model(
    preset: str = "quadratic-linear",
    *,
    p_max: float = 1.0,
    viscosity_liquid: float = 1.0,
    viscosity_gas: float = 1.0,
    relperm_exponent: float = 2.0,
    rho_liquid: float = 1.0,
    rho_gas_ref: float = 1.0,
    gas_pressure_scale: float = 10.0,
    rho_gas_min: float = 0.5,
    rho_gas_max: float = 2.0,
    porosity: float | Callable[[np.ndarray], np.ndarray] = 0.3,
    permeability: Any = 1.0,
    gravity: Optional[tuple[float, ...]] = None,
) -> FluidModel:
    """Create a FluidModel from a named preset and coefficient overrides.

    Presets:
        quadratic-linear: k_r = s^2, linear p_c, constant liquid density,
            clamped exponential gas density
        constant-density: same with a constant gas density rho_gas_ref
    """
    if preset not in PRESETS:
        raise ModelError(f"Unknown model preset {preset!r}; expected one of {PRESETS}")
    try:
        relperm = PowerRelPerm(exponent=relperm_exponent)
        if preset == "quadratic-linear":
            gas_density: Any = ExponentialDensity(
                rho_ref=rho_gas_ref,
                pressure_scale=gas_pressure_scale,
                rho_min=rho_gas_min,
                rho_max=rho_gas_max,
            )
        else:
            gas_density = ConstantDensity(rho=rho_gas_ref)
        return FluidModel(
            liquid=PhaseProperties(
                relperm=relperm, viscosity=viscosity_liquid, density=ConstantDensity(rho=rho_liquid)
            ),
            gas=PhaseProperties(relperm=relperm, viscosity=viscosity_gas, density=gas_density),
            capillary=LinearCapillary(p_max=p_max),
            porosity=porosity,
            permeability=permeability,
            gravity=tuple(gravity) if gravity is not None else None,
            preset=preset,
        )
    except ValueError as e:
        raise ModelError(f"Invalid coefficients for preset {preset!r}: {e}") from e


# --- Pointwise laws ---


def mobility(fluid: FluidModel, phase: Phase, s: ArrayLike) -> np.ndarray:
    """M_alpha(s) = k_r(s) / mu, extended by zero below s = 0."""
    props = fluid.phase(phase)
    s = np.asarray(s, dtype=np.float64)
    return np.where(s > 0.0, props.relperm(s), 0.0) / props.viscosity


def mobility_derivative(fluid: FluidModel, phase: Phase, s: ArrayLike) -> np.ndarray:
    props = fluid.phase(phase)
    return props.relperm.derivative(s) / props.viscosity


def total_mobility(fluid: FluidModel, s_l: ArrayLike) -> np.ndarray:
    """M(s_l) = M_l(s_l) + M_g(1 - s_l)."""
    s_l = np.asarray(s_l, dtype=np.float64)
    return mobility(fluid, Phase.LIQUID, s_l) + mobility(fluid, Phase.GAS, 1.0 - s_l)


def density(fluid: FluidModel, phase: Phase, p: ArrayLike) -> np.ndarray:
    return fluid.phase(phase).density(p)


def density_derivative(fluid: FluidModel, phase: Phase, p: ArrayLike) -> np.ndarray:
    return fluid.phase(phase).density.derivative(p)


def g_alpha(fluid: FluidModel, p: ArrayLike, phase: Phase) -> np.ndarray:
    """g_alpha(p) = integral from 0 to p of 1/rho_alpha."""
    return fluid.phase(phase).density.inverse_integral(p)


# --- Capillary closure ---


def get_capillary_range(fluid: FluidModel) -> tuple[float, float]:
    """Return (p_c(1), p_c(0))."""
    pc = fluid.capillary
    return float(pc(np.float64(1.0))), float(pc(np.float64(0.0)))


def capillary_inverse(fluid: FluidModel, pc_value: ArrayLike) -> np.ndarray:
    """Saturation s with p_c(s) = pc_value.

    Values outside range(p_c) by at most 1e-9 of its span are clamped to the
    nearest endpoint.

    Raises:
        CapillaryRangeError: value further outside range(p_c), or not finite
    """
    lo, hi = get_capillary_range(fluid)
    slack = CAPILLARY_CLAMP_RTOL * (hi - lo)
    value = np.asarray(pc_value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise CapillaryRangeError("Non-finite capillary pressure")
    if np.any(value > hi + slack) or np.any(value < lo - slack):
        raise CapillaryRangeError(
            f"Capillary pressure in [{value.min():.6g}, {value.max():.6g}] "
            f"outside range [{lo:.6g}, {hi:.6g}]"
        )
    value = np.clip(value, lo, hi)

    pc = fluid.capillary
    if hasattr(pc, "inverse"):
        return np.clip(pc.inverse(value), 0.0, 1.0)

    a = np.zeros_like(value)
    b = np.ones_like(value)
    for _ in range(BISECTION_STEPS):
        m = 0.5 * (a + b)
        right = pc(m) > value  # p_c decreasing: root lies to the right
        a = np.where(right, m, a)
        b = np.where(right, b, m)
    return 0.5 * (a + b)


def extended_saturation(fluid: FluidModel, pc_value: ArrayLike) -> np.ndarray:
    """Inverse of p_c continued linearly outside range(p_c).

    Used for Newton trial points only; accepted states go through
    capillary_inverse.
    """
    lo, hi = get_capillary_range(fluid)
    value = np.asarray(pc_value, dtype=np.float64)
    inside = capillary_inverse(fluid, np.clip(value, lo, hi))
    slope0 = float(fluid.capillary.derivative(np.float64(0.0)))
    slope1 = float(fluid.capillary.derivative(np.float64(1.0)))
    return np.where(
        value > hi,
        (value - hi) / slope0,
        np.where(value < lo, 1.0 + (value - lo) / slope1, inside),
    )


def extended_saturation_derivative(fluid: FluidModel, pc_value: ArrayLike) -> np.ndarray:
    """d s / d p_c of extended_saturation."""
    lo, hi = get_capillary_range(fluid)
    value = np.asarray(pc_value, dtype=np.float64)
    s = np.where(value > hi, 0.0, np.where(value < lo, 1.0, extended_saturation(fluid, value)))
    return 1.0 / fluid.capillary.derivative(np.clip(s, 0.0, 1.0))


# --- Derived functions ---


def _check_saturation(s: ArrayLike, name: str = "saturation") -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if np.any(~np.isfinite(s)) or np.any(s < -SATURATION_SLACK) or np.any(s > 1 + SATURATION_SLACK):
        raise SaturationDomainError(f"{name} outside [0, 1]: [{np.min(s):.6g}, {np.max(s):.6g}]")
    return np.clip(s, 0.0, 1.0)


def _pbar_integrand(fluid: FluidModel) -> Callable[[np.ndarray], np.ndarray]:
    def integrand(s: np.ndarray) -> np.ndarray:
        return (
            mobility(fluid, Phase.GAS, 1.0 - s)
            * fluid.capillary.derivative(s)
            / total_mobility(fluid, s)
        )

    return integrand


def _gamma_integrand(fluid: FluidModel) -> Callable[[np.ndarray], np.ndarray]:
    def integrand(s: np.ndarray) -> np.ndarray:
        return (
            -mobility(fluid, Phase.LIQUID, s)
            * mobility(fluid, Phase.GAS, 1.0 - s)
            * fluid.capillary.derivative(s)
            / total_mobility(fluid, s)
        )

    return integrand


def check_assumptions(
    fluid: FluidModel, resolution: int = DEFAULT_RESOLUTION + 1
) -> ModelAssumptions:
    """Sample the structural assumptions on the coefficients.

    Raises:
        ModelAssumptionError: a floor, bound or endpoint condition fails
    """
    grid = uniform_grid(resolution)

    total = total_mobility(fluid, grid)
    k = int(np.argmin(total))
    lo_s, hi_s = grid[max(k - 1, 0)], grid[min(k + 1, resolution - 1)]
    refined = minimize_scalar(
        lambda s: float(total_mobility(fluid, np.float64(s))),
        bounds=(lo_s, hi_s),
        method="bounded",
        options={"xatol": 1e-12},
    )
    m0 = float(min(total[k], refined.fun))
    if not m0 > 0.0:
        raise ModelAssumptionError(f"Total mobility vanishes near s = {grid[k]:.6g}")

    slopes = fluid.capillary.derivative(grid)
    if np.any(slopes >= 0.0):
        raise ModelAssumptionError("Capillary pressure must be strictly decreasing on [0, 1]")
    pc_low, pc_high = get_capillary_range(fluid)
    pc_max = pc_high - pc_low
    if abs(pc_low) > 1e-12 * max(1.0, pc_max):
        raise ModelAssumptionError(f"p_c(1) must be 0, got {pc_low:.6g}")

    bounds = [fluid.liquid.density.bounds, fluid.gas.density.bounds]
    rho_min = min(b[0] for b in bounds)
    rho_max = max(b[1] for b in bounds)
    if not 0.0 < rho_min <= rho_max:
        raise ModelAssumptionError(f"Density bounds invalid: [{rho_min}, {rho_max}]")

    m_l0 = float(mobility(fluid, Phase.LIQUID, np.float64(0.0)))
    m_g0 = float(mobility(fluid, Phase.GAS, np.float64(0.0)))
    if abs(m_l0) > 1e-14 or abs(m_g0) > 1e-14:
        raise ModelAssumptionError("Mobilities must vanish at zero saturation")

    if not callable(fluid.porosity) and not 0.0 < float(fluid.porosity) <= 1.0:
        raise ModelAssumptionError(f"Porosity must lie in (0, 1], got {fluid.porosity}")

    return ModelAssumptions(
        m0=m0,
        pc_slope_floor=float(np.min(-slopes)),
        pc_max=pc_max,
        rho_min=rho_min,
        rho_max=rho_max,
        liquid_mobility_at_zero=m_l0,
        gas_mobility_at_zero=m_g0,
    )


def estimate_holder_exponent(grid: np.ndarray, big_b: np.ndarray) -> float:
    """Estimate the Hoelder exponent of B^-1 from the endpoint growth of B.

    Near an endpoint B behaves like |s - s_end|^q, so B^-1 is min(1, 1/q)-Hoelder.
    """
    n = len(grid)
    i, j = max(1, n // 512), max(2, n // 128)
    exponents = []
    if big_b[i] > 0.0 and big_b[j] > big_b[i]:
        exponents.append(np.log(big_b[j] / big_b[i]) / np.log(grid[j] / grid[i]))
    top = big_b[-1]
    near, far = top - big_b[n - 1 - i], top - big_b[n - 1 - j]
    if near > 0.0 and far > near:
        exponents.append(np.log(far / near) / np.log((1 - grid[n - 1 - j]) / (1 - grid[n - 1 - i])))
    if not exponents:
        return 1.0
    return float(min(1.0, 1.0 / max(exponents)))


def build_derived(fluid: FluidModel, resolution: int = DEFAULT_RESOLUTION) -> DerivedFunctions:
    """Tabulate pbar, ptilde, gamma and B on a uniform saturation grid.

    pbar(0) = 0 and ptilde = pbar - p_c, so p_l + pbar(s) = p_g + ptilde(s).
    """
    assumptions = check_assumptions(fluid)
    grid = uniform_grid(resolution)
    gamma = _gamma_integrand(fluid)(grid)
    pbar = cumulative_integral(_pbar_integrand(fluid)(grid), grid)
    big_b = cumulative_integral(gamma, grid)
    ptilde = pbar - fluid.capillary(grid)

    for array in (grid, gamma, pbar, big_b, ptilde):
        array.flags.writeable = False

    derived = DerivedFunctions(
        fluid=fluid,
        grid=grid,
        pbar=pbar,
        ptilde=ptilde,
        gamma=gamma,
        big_b=big_b,
        pc_at_zero=float(fluid.capillary(np.float64(0.0))),
        m0=assumptions.m0,
        holder_exponent=estimate_holder_exponent(grid, big_b),
    )
    logger.debug(
        f"Derived functions: {resolution} points, m0={assumptions.m0:.6g}, "
        f"B(1)={big_b[-1]:.6g}, pbar(1)={pbar[-1]:.6g}"
    )
    return derived


def _evaluate_table(
    derived: DerivedFunctions,
    table: np.ndarray,
    integrand: Callable[[np.ndarray], np.ndarray],
    s: np.ndarray,
) -> np.ndarray:
    """Node value plus Gauss-Legendre over the partial cell."""
    grid = derived.grid
    n = len(grid)
    k = np.clip(np.floor(s * (n - 1)).astype(np.int64), 0, n - 2)
    return table[k] + gauss_legendre(integrand, grid[k], s)


def pbar(derived: DerivedFunctions, s_l: ArrayLike) -> np.ndarray:
    s = _check_saturation(s_l)
    return _evaluate_table(derived, derived.pbar, _pbar_integrand(derived.fluid), s)


def ptilde(derived: DerivedFunctions, s_l: ArrayLike) -> np.ndarray:
    s = _check_saturation(s_l)
    return pbar(derived, s) - derived.fluid.capillary(s)


def gamma(derived: DerivedFunctions, s_l: ArrayLike) -> np.ndarray:
    return _gamma_integrand(derived.fluid)(_check_saturation(s_l))


def big_B(derived: DerivedFunctions, s_l: ArrayLike) -> np.ndarray:  # noqa: N802
    """B(s) = integral from 0 to s of gamma."""
    s = _check_saturation(s_l)
    return _evaluate_table(derived, derived.big_b, _gamma_integrand(derived.fluid), s)


def big_B_inverse(derived: DerivedFunctions, b: ArrayLike) -> np.ndarray:  # noqa: N802
    """Saturation with B(s) = b, for b in [0, B(1)]."""
    top = float(derived.big_b[-1])
    b = np.asarray(b, dtype=np.float64)
    slack = SATURATION_SLACK * max(top, 1.0)
    if np.any(~np.isfinite(b)) or np.any(b < -slack) or np.any(b > top + slack):
        raise SaturationDomainError(f"B value outside [0, {top:.6g}]")
    b = np.clip(b, 0.0, top)

    grid = derived.grid
    k = np.clip(np.searchsorted(derived.big_b, b, side="left"), 1, len(grid) - 1)
    a, c = grid[k - 1], grid[k]
    for _ in range(BISECTION_STEPS):
        m = 0.5 * (a + c)
        below = big_B(derived, m) < b
        a = np.where(below, m, a)
        c = np.where(below, c, m)
    return 0.5 * (a + c)


def global_pressure(derived: DerivedFunctions, p_l: ArrayLike, s_l: ArrayLike) -> np.ndarray:
    """p = p_l + pbar(s_l)."""
    return np.asarray(p_l, dtype=np.float64) + pbar(derived, s_l)


def global_pressure_from_gas(
    derived: DerivedFunctions, p_g: ArrayLike, s_l: ArrayLike
) -> np.ndarray:
    """p = p_g + ptilde(s_l)."""
    return np.asarray(p_g, dtype=np.float64) + ptilde(derived, s_l)
