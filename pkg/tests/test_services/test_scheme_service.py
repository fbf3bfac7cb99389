"""Tests for scheme service."""

import numpy as np
import pytest

from porflow.core.errors import CapillaryRangeError, ModelError
from porflow.core.models import DerivedFunctions, FluidModel, Phase, PrimalMesh, SchemeContext
from porflow.services import scheme_service
from porflow.services.physics_service import create_fluid_model, extended_saturation
from tests.conftest import make_context


@pytest.fixture
def steep_gas() -> FluidModel:
    """Gas density e^p, clamped far away from the tested pressures."""
    return create_fluid_model(gas_pressure_scale=1.0, rho_gas_min=0.01, rho_gas_max=100.0)


def _random_state(context: SchemeContext, seed: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Pressures with s_l in [0.2, 0.8] on free volumes and zero on Dirichlet ones."""
    rng = np.random.default_rng(seed)
    n = context.dual.n_volumes
    s = rng.uniform(0.2, 0.8, n)
    p_l = rng.uniform(-0.5, 0.5, n)
    p_g = p_l + (1.0 - s)
    p_l[context.dirichlet] = 0.0
    p_g[context.dirichlet] = 0.0
    return p_l, p_g


def test_interface_density_closed_form(steep_gas: FluidModel) -> None:
    """Test rho_DE = 1 / (1 - e^-1) for rho = e^p between p = 0 and p = 1."""
    value = scheme_service.interface_density(steep_gas, Phase.GAS, 0.0, 1.0)
    assert value == pytest.approx(1.0 / (1.0 - np.exp(-1.0)), rel=1e-12)


def test_interface_density_equal_and_symmetric(steep_gas: FluidModel) -> None:
    """Test equal pressures give rho(p) and swapping arguments changes nothing."""
    assert scheme_service.interface_density(steep_gas, Phase.GAS, 0.7, 0.7) == pytest.approx(
        np.exp(0.7)
    )
    p_d = np.array([0.1, -2.0, 3.0, 0.5])
    p_e = np.array([0.9, 1.0, 3.0 + 1e-9, -0.25])
    np.testing.assert_array_equal(
        scheme_service.interface_density(steep_gas, Phase.GAS, p_d, p_e),
        scheme_service.interface_density(steep_gas, Phase.GAS, p_e, p_d),
    )


def test_interface_density_lies_between_endpoints(steep_gas: FluidModel) -> None:
    """Test the mean value property min(rho) <= rho_DE <= max(rho)."""
    value = scheme_service.interface_density(steep_gas, Phase.GAS, -1.0, 2.0)
    assert np.exp(-1.0) <= value <= np.exp(2.0)


def test_interface_density_derivatives(steep_gas: FluidModel) -> None:
    """Test the partial derivatives against central differences."""
    p_d, p_e, h = np.array([0.3]), np.array([1.1]), 1e-6
    d_d, d_e = scheme_service.interface_density_derivatives(steep_gas, Phase.GAS, p_d, p_e)

    def rho(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return scheme_service.interface_density(steep_gas, Phase.GAS, a, b)

    np.testing.assert_allclose(d_d, (rho(p_d + h, p_e) - rho(p_d - h, p_e)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(d_e, (rho(p_d, p_e + h) - rho(p_d, p_e - h)) / (2 * h), rtol=1e-6)


@pytest.mark.parametrize(
    ("p_d", "dp"),
    [(0.0, 5e-6), (1.0, 1e-5), (-5.0, 2e-5), (2.0, 3e-4), (0.5, 1e-3), (-3.0, 0.5)],
)
def test_interface_density_close_pressures(p_d: float, dp: float) -> None:
    """Test rho_DE against an expm1 closed form where differencing g would cancel."""
    c = 10.0
    fluid = create_fluid_model(gas_pressure_scale=c, rho_gas_min=0.01, rho_gas_max=100.0)
    # integral of e^(-q/c) over [p_d, p_d + dp]
    integral = -c * np.exp(-p_d / c) * np.expm1(-dp / c)
    value = scheme_service.interface_density(fluid, Phase.GAS, p_d, p_d + dp)
    assert value == pytest.approx(dp / integral, rel=1e-10)


def test_interface_density_across_clamp_breakpoint(fluid: FluidModel) -> None:
    """Test a short interval straddling the upper density clamp stays exact."""
    c, rho_max = 10.0, 2.0
    hi = c * np.log(rho_max)
    p_d, p_e = hi - 4e-6, hi + 6e-6
    integral = -c * np.exp(-p_d / c) * np.expm1(-(hi - p_d) / c) + (p_e - hi) / rho_max
    value = scheme_service.interface_density(fluid, Phase.GAS, p_d, p_e)
    assert value == pytest.approx((p_e - p_d) / integral, rel=1e-10)


def test_gravity_flux_uses_squared_density(steep_gas: FluidModel) -> None:
    """Test a flux at equal pressures is rho_DE^2 times the upwinded gravity weight."""
    rho = np.exp(0.4)
    down = scheme_service.flux(steep_gas, Phase.LIQUID, 0.6, 0.2, 0.4, 0.4, 1.0, 0.5)
    up = scheme_service.flux(steep_gas, Phase.GAS, 0.6, 0.2, 0.4, 0.4, 1.0, -0.5)
    assert down == pytest.approx(1.0 * 0.36 * 0.5)
    assert up == pytest.approx(-(rho**2) * 0.2**2 * 0.5)


def test_upwind_saturation_rule() -> None:
    """Test s_D is taken when T (p_E - p_D) <= 0, s_E otherwise."""
    np.testing.assert_array_equal(
        scheme_service.upwind_saturation(0.2, 0.7, np.array([1.0, -1.0, 0.0])), [0.7, 0.2, 0.2]
    )


@pytest.mark.parametrize("gravity_weight", [None, 0.4, -0.4])
def test_flux_antisymmetric(fluid: FluidModel, gravity_weight: float | None) -> None:
    """Test F_DE = -F_ED including the gravity part."""
    args = (np.array([0.3]), np.array([0.6]), np.array([0.2]), np.array([-0.1]), 1.5)
    forward = scheme_service.flux(fluid, Phase.GAS, *args, gravity_weight=gravity_weight)
    s_d, s_e, p_d, p_e, t = args
    reverse_weight = None if gravity_weight is None else -gravity_weight
    backward = scheme_service.flux(
        fluid, Phase.GAS, s_e, s_d, p_e, p_d, t, gravity_weight=reverse_weight
    )
    np.testing.assert_allclose(forward, -backward, rtol=1e-14)


def test_flux_flows_downhill(fluid: FluidModel) -> None:
    """Test the flux leaves the higher-pressure volume with the upwind mobility."""
    value = scheme_service.flux(fluid, Phase.LIQUID, 0.5, 0.1, 1.0, 0.0, 2.0)
    assert value == pytest.approx(1.0 * 0.25 * 2.0 * 1.0)


def test_residual_zero_at_rest(closed_context: SchemeContext) -> None:
    """Test a uniform state with no sources is an exact solution."""
    n = closed_context.dual.n_volumes
    state = scheme_service.make_state(closed_context, np.zeros(n), np.full(n, 0.5))
    sources = scheme_service.zero_sources(closed_context)
    out = scheme_service.residual(state, state, 0.1, closed_context, sources)
    np.testing.assert_allclose(out, 0.0, atol=1e-14)


def test_closed_system_fluxes_cancel(closed_context: SchemeContext) -> None:
    """Test the residual summed over volumes equals the mass change rate."""
    p_l, p_g = _random_state(closed_context)
    state = scheme_service.make_state(closed_context, p_l, p_g)
    n = closed_context.dual.n_volumes
    prev = scheme_service.make_state(closed_context, np.zeros(n), np.full(n, 0.5))
    dt = 0.05
    out = scheme_service.residual(
        state, prev, dt, closed_context, scheme_service.zero_sources(closed_context)
    )
    mass_now = scheme_service.total_mass(state, closed_context)
    mass_prev = scheme_service.total_mass(prev, closed_context)
    for a in range(2):
        assert out[:, a].sum() == pytest.approx((mass_now[a] - mass_prev[a]) / dt, rel=1e-9)


def test_dirichlet_rows_are_zero(square_context: SchemeContext) -> None:
    """Test Dirichlet volumes carry no residual."""
    p_l, p_g = _random_state(square_context)
    state = scheme_service.make_state(square_context, p_l, p_g)
    sources = scheme_service.build_sources(square_context, 0.5, 1.0, 0.3)
    out = scheme_service.residual(state, state, 0.1, square_context, sources)
    np.testing.assert_array_equal(out[square_context.dirichlet], 0.0)


@pytest.mark.parametrize("gravity", [None, (0.0, -1.0)])
def test_analytic_jacobian_matches_finite_differences(
    square_mesh: PrimalMesh,
    derived: DerivedFunctions,
    gravity: tuple[float, float] | None,
) -> None:
    """Test residual_jacobian against a dense finite-difference Jacobian, upwind frozen."""
    fluid = create_fluid_model(gravity=gravity)
    context = make_context(square_mesh, fluid, derived)
    p_l, p_g = _random_state(context)
    n = context.dual.n_volumes
    prev = scheme_service.make_state(context, np.zeros(n), np.full(n, 0.5))
    sources = scheme_service.build_sources(context, 0.5, 1.0, 0.3)
    dt = 0.1
    upwind = scheme_service.compute_upwind(context, p_l, p_g)
    free = context.free

    def free_rows(pl: np.ndarray, pg: np.ndarray) -> np.ndarray:
        s_l = extended_saturation(fluid, pg - pl)
        out = scheme_service.evaluate_residual(context, pl, pg, s_l, prev, dt, sources, upwind)
        return out[free].ravel()

    h = 1e-7
    dense = np.zeros((2 * len(free), 2 * len(free)))
    for f, vol in enumerate(free):
        for b in range(2):
            plus = [p_l.copy(), p_g.copy()]
            minus = [p_l.copy(), p_g.copy()]
            plus[b][vol] += h
            minus[b][vol] -= h
            dense[:, 2 * f + b] = (free_rows(*plus) - free_rows(*minus)) / (2 * h)

    analytic = scheme_service.residual_jacobian(context, p_l, p_g, dt, sources, upwind)
    scale = np.abs(dense).max()
    np.testing.assert_allclose(analytic.toarray(), dense, rtol=1e-5, atol=1e-6 * scale)


def test_build_sources_averages_and_validation(square_context: SchemeContext) -> None:
    """Test time-dependent sources and rejection of invalid rates."""
    sources = scheme_service.build_sources(
        square_context, 0.0, lambda points, t: t * np.ones(len(points)), 0.25, time=2.0
    )
    np.testing.assert_allclose(sources.injection, 2.0)
    np.testing.assert_allclose(sources.injected_gas, 0.75)
    with pytest.raises(ModelError):
        scheme_service.build_sources(square_context, production=-1.0)
    with pytest.raises(ModelError):
        scheme_service.build_sources(square_context, injection=1.0, injected_liquid=1.5)


def test_project_initial_integrates_linears(square_context: SchemeContext) -> None:
    """Test the projection preserves the integral of a linear field."""
    state = scheme_service.project_initial(
        lambda x: 1.0 + 2.0 * x[:, 0] + x[:, 1],
        lambda x: 1.5 + 2.0 * x[:, 0] + x[:, 1],
        square_context,
    )
    volumes = square_context.dual.volumes
    assert np.sum(volumes * state.p_l) == pytest.approx(2.5)
    np.testing.assert_allclose(state.s_l, 0.5)
    # the initial projection does not pin Dirichlet volumes
    assert np.all(state.p_l[square_context.dirichlet] > 0.0)


def test_project_initial_out_of_range(square_context: SchemeContext) -> None:
    """Test initial pressures violating the capillary range are refused."""
    with pytest.raises(CapillaryRangeError):
        scheme_service.project_initial(0.0, 2.0, square_context)


def test_make_state_pins_dirichlet(square_context: SchemeContext) -> None:
    """Test Dirichlet volumes are set to p = 0 and therefore s_l = 1."""
    n = square_context.dual.n_volumes
    state = scheme_service.make_state(square_context, np.full(n, 0.2), np.full(n, 0.7))
    dirichlet = square_context.dirichlet
    np.testing.assert_array_equal(state.p_l[dirichlet], 0.0)
    np.testing.assert_allclose(state.s_l[dirichlet], 1.0)
    np.testing.assert_allclose(state.s_l[~dirichlet], 0.5)


def test_total_mass_and_accumulation_scale(closed_context: SchemeContext) -> None:
    """Test phase masses phi |Omega| s at unit densities and the residual scale."""
    n = closed_context.dual.n_volumes
    state = scheme_service.make_state(closed_context, np.zeros(n), np.full(n, 0.5))
    liquid, gas = scheme_service.total_mass(state, closed_context)
    assert liquid == pytest.approx(0.15)
    assert gas == pytest.approx(0.15)
    assert scheme_service.accumulation_scale(closed_context, 0.1) == pytest.approx(2.0)
