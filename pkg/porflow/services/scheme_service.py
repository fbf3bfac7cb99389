"""Scheme service: residual of the implicit combined finite volume / CR scheme.

Unknowns live on dual volumes. Residual rows exist for every non-Dirichlet
dual volume and both phases; Dirichlet volumes carry p_l = p_g = 0.
Pair fluxes are written as outflow from D to E for each stored pair D < E.
"""

from collections.abc import Callable
from typing import Optional

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike

from porflow.core.errors import ModelError
from porflow.core.logger import logger
from porflow.core.models import (
    BoundaryTag,
    DerivedFunctions,
    DualMesh,
    FluidModel,
    Phase,
    PrimalMesh,
    SchemeContext,
    SourceField,
    State,
    StiffnessMatrix,
)
from porflow.services.mesh_service import get_dual_pieces
from porflow.services.physics_service import (
    capillary_inverse,
    density,
    density_derivative,
    extended_saturation,
    extended_saturation_derivative,
    g_alpha,
    mobility,
    mobility_derivative,
)
from porflow.utils.quadrature import gauss_legendre

PHASES = (Phase.LIQUID, Phase.GAS)
NEAR_EQUAL_RTOL = 1e-6
QUADRATURE_RTOL = 1e-4

# Source data: constant, or callable of (points (n, d), time) -> (n,)
FieldSpec = float | Callable[[np.ndarray, float], np.ndarray]


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.flags.writeable = False
    return array


def _dual_average(mesh: PrimalMesh, dual: DualMesh, values_at_pieces: np.ndarray) -> np.ndarray:
    dual_index, _, weights = get_dual_pieces(mesh)
    return np.bincount(dual_index, weights=weights * values_at_pieces, minlength=mesh.n_sides) / (
        dual.volumes
    )


def _piece_values(mesh: PrimalMesh, spec: FieldSpec, time: Optional[float] = None) -> np.ndarray:
    _, points, _ = get_dual_pieces(mesh)
    if callable(spec):
        values = spec(points) if time is None else spec(points, time)  # type: ignore[call-arg]
        return np.broadcast_to(np.asarray(values, dtype=np.float64), (len(points),))
    return np.full(len(points), float(spec))


# --- Context ---


def build_context(
    mesh: PrimalMesh,
    dual: DualMesh,
    stiffness: StiffnessMatrix,
    fluid: FluidModel,
    derived: DerivedFunctions,
) -> SchemeContext:
    """Bundle everything the residual needs (pure function)."""
    if callable(fluid.porosity):
        porosity = _dual_average(mesh, dual, _piece_values(mesh, fluid.porosity))
    else:
        porosity = np.full(mesh.n_sides, float(fluid.porosity))
    if np.any(porosity <= 0.0) or np.any(porosity > 1.0):
        raise ModelError(
            f"Porosity must lie in (0, 1], got [{porosity.min():.6g}, {porosity.max():.6g}]"
        )

    dirichlet = mesh.side_tags == BoundaryTag.DIRICHLET
    dirichlet.flags.writeable = False
    free = np.flatnonzero(~dirichlet)
    free.flags.writeable = False

    weights = None
    if fluid.gravity is not None and any(g != 0.0 for g in fluid.gravity):
        gravity = np.asarray(fluid.gravity, dtype=np.float64)
        if gravity.shape != (mesh.dim,):
            raise ModelError(f"Gravity must have {mesh.dim} components, got {gravity.shape}")
        weights = _readonly(calculate_gravity_weights(dual, stiffness, gravity))

    logger.debug(
        f"Scheme context: {len(free)} free volumes, {int(dirichlet.sum())} Dirichlet, "
        f"gravity={'on' if weights is not None else 'off'}"
    )
    return SchemeContext(
        mesh=mesh,
        dual=dual,
        stiffness=stiffness,
        fluid=fluid,
        derived=derived,
        porosity=_readonly(porosity),
        dirichlet=dirichlet,
        free=free,
        gravity_weights=weights,
    )


def calculate_gravity_weights(
    dual: DualMesh, stiffness: StiffnessMatrix, gravity: np.ndarray
) -> np.ndarray:
    """w_DE = (Lambda_K g) . eta_DE with eta_DE = |sigma_DE| (Q_E - Q_D) / d_DE."""
    direction = dual.centres[dual.pair_e] - dual.centres[dual.pair_d]
    eta = (dual.pair_face_measure / dual.pair_distance)[:, None] * direction
    lam_g = stiffness.element_tensors[dual.pair_element] @ gravity
    return np.einsum("ij,ij->i", lam_g, eta)


# --- Sources ---


def build_sources(
    context: SchemeContext,
    production: FieldSpec = 0.0,
    injection: FieldSpec = 0.0,
    injected_liquid: FieldSpec = 1.0,
    time: float = 0.0,
) -> SourceField:
    """Dual-volume source averages: barycentre rule in space at the given time.

    Raises:
        ModelError: negative rates or injected saturation outside [0, 1]
    """
    mesh, dual = context.mesh, context.dual
    f_p = _dual_average(mesh, dual, _piece_values(mesh, production, time))
    f_i = _dual_average(mesh, dual, _piece_values(mesh, injection, time))
    s_i = _dual_average(mesh, dual, _piece_values(mesh, injected_liquid, time))
    if np.any(f_p < 0.0) or np.any(f_i < 0.0):
        raise ModelError("Production and injection rates must be nonnegative")
    if np.any(s_i < -1e-12) or np.any(s_i > 1.0 + 1e-12):
        raise ModelError("Injected liquid saturation must lie in [0, 1]")
    return SourceField(
        production=_readonly(f_p),
        injection=_readonly(f_i),
        injected_liquid=_readonly(np.clip(s_i, 0.0, 1.0)),
    )


def zero_sources(context: SchemeContext) -> SourceField:
    n = context.dual.n_volumes
    return SourceField(
        production=_readonly(np.zeros(n)),
        injection=_readonly(np.zeros(n)),
        injected_liquid=_readonly(np.ones(n)),
    )


# --- States ---


def close_capillary(state: State, fluid: FluidModel) -> State:
    """Recompute s_l = p_c^-1(p_g - p_l) with the clamping policy of the closure."""
    s_l = capillary_inverse(fluid, state.p_g - state.p_l)
    return state.model_copy(update={"s_l": _readonly(s_l)})


def make_state(
    context: SchemeContext,
    p_l: ArrayLike,
    p_g: ArrayLike,
    step: int = 0,
    time: float = 0.0,
    pin_dirichlet: bool = True,
) -> State:
    """Closed state from phase pressures; Dirichlet volumes pinned at zero."""
    p_l = np.array(p_l, dtype=np.float64)
    p_g = np.array(p_g, dtype=np.float64)
    if pin_dirichlet:
        p_l[context.dirichlet] = 0.0
        p_g[context.dirichlet] = 0.0
    s_l = capillary_inverse(context.fluid, p_g - p_l)
    return State(
        p_l=_readonly(p_l), p_g=_readonly(p_g), s_l=_readonly(s_l), step=step, time=time
    )


def project_initial(p_l0: FieldSpec, p_g0: FieldSpec, context: SchemeContext) -> State:
    """Dual-volume averages of the initial pressures, then capillary closure.

    Averages use the barycentre rule on every piece K ∩ D, exact for linear
    fields. The closure raises CapillaryRangeError if p_g - p_l leaves range(p_c).
    """
    mesh, dual = context.mesh, context.dual

    def average(spec: FieldSpec) -> np.ndarray:
        if callable(spec):
            _, points, _ = get_dual_pieces(mesh)
            values = np.broadcast_to(np.asarray(spec(points), dtype=np.float64), (len(points),))
            return _dual_average(mesh, dual, values)
        return np.full(dual.n_volumes, float(spec))

    return make_state(context, average(p_l0), average(p_g0), pin_dirichlet=False)


def total_mass(state: State, context: SchemeContext) -> tuple[float, float]:
    """Total discrete mass per phase, sum_D |D| phi_D rho(p) s."""
    weight = context.dual.volumes * context.porosity
    fluid = context.fluid
    liquid = float(np.sum(weight * density(fluid, Phase.LIQUID, state.p_l) * state.s_l))
    gas = float(np.sum(weight * density(fluid, Phase.GAS, state.p_g) * state.s_g))
    return liquid, gas


def accumulation_scale(context: SchemeContext, dt: float) -> float:
    """max_D |D| phi_D rho_max / dt, the natural size of a residual entry."""
    rho_max = max(context.fluid.liquid.density.bounds[1], context.fluid.gas.density.bounds[1])
    return float(np.max(context.dual.volumes * context.porosity) * rho_max / dt)


# --- Pair quantities ---


def _inverse_density_integral(
    fluid: FluidModel, phase: Phase, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    """Integral of 1/rho over [lo, hi], split at the clamp breakpoints of the law."""
    law = fluid.phase(phase).density
    kinks = sorted(getattr(law, "breakpoints", ()))
    cuts = [lo, *(np.clip(k, lo, hi) for k in kinks), hi]
    total = np.zeros_like(lo)
    for a, b in zip(cuts[:-1], cuts[1:]):
        total = total + gauss_legendre(lambda q: 1.0 / law(q), a, b)
    return total


def interface_density(
    fluid: FluidModel, phase: Phase, p_d: ArrayLike, p_e: ArrayLike
) -> np.ndarray:
    """rho_DE = (p_E - p_D) / (g(p_E) - g(p_D)), rho(p_D) when equal.

    Close pressures integrate 1/rho by quadrature instead of differencing g,
    which cancels. The result is exactly symmetric in its pressure arguments.
    """
    p_d = np.asarray(p_d, dtype=np.float64)
    p_e = np.asarray(p_e, dtype=np.float64)
    dp = p_e - p_d
    close = np.abs(dp) <= QUADRATURE_RTOL * (1.0 + np.abs(p_d) + np.abs(p_e))
    safe_dp = np.where(close, 1.0, dp)
    dg = np.where(close, 1.0, g_alpha(fluid, p_e, phase) - g_alpha(fluid, p_d, phase))
    lo, hi = np.minimum(p_d, p_e), np.maximum(p_d, p_e)
    integral = _inverse_density_integral(fluid, phase, lo, np.where(close, hi, lo))
    use = close & (dp != 0.0)
    mean = np.where(use, hi - lo, 1.0) / np.where(use, integral, 1.0)
    equal = density(fluid, phase, p_d)
    return np.where(dp == 0.0, equal, np.where(close, mean, safe_dp / dg))


def interface_density_derivatives(
    fluid: FluidModel, phase: Phase, p_d: np.ndarray, p_e: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of interface_density with respect to p_D and p_E."""
    rho = interface_density(fluid, phase, p_d, p_e)
    dp = p_e - p_d
    near = np.abs(dp) <= NEAR_EQUAL_RTOL * (1.0 + np.abs(p_d) + np.abs(p_e))
    safe_dp = np.where(near, 1.0, dp)
    half = 0.5 * density_derivative(fluid, phase, 0.5 * (p_d + p_e))
    d_e = np.where(near, half, rho / safe_dp * (1.0 - rho / density(fluid, phase, p_e)))
    d_d = np.where(near, half, -rho / safe_dp * (1.0 - rho / density(fluid, phase, p_d)))
    return d_d, d_e


def upwind_saturation(s_d: ArrayLike, s_e: ArrayLike, coupling_times_dp: ArrayLike) -> np.ndarray:
    """s_D when T_DE (p_E - p_D) <= 0, else s_E."""
    return np.where(np.asarray(coupling_times_dp) <= 0.0, s_d, s_e)


def flux(
    fluid: FluidModel,
    phase: Phase,
    s_d: ArrayLike,
    s_e: ArrayLike,
    p_d: ArrayLike,
    p_e: ArrayLike,
    coupling: ArrayLike,
    gravity_weight: Optional[ArrayLike] = None,
    upwind_d: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Mass outflow from D to E of one phase.

    F = rho_DE M(s_up) T (p_D - p_E) + rho_DE^2 (M(s_D) w+ - M(s_E) w-), with s
    the phase saturation. ``upwind_d`` freezes the upwind choice (True = D).
    The gravity part carries rho_DE squared: w = (Lambda_K g).eta_DE holds g alone
    and the gravity potential is rho g.
    """
    s_d, s_e = np.asarray(s_d, dtype=np.float64), np.asarray(s_e, dtype=np.float64)
    p_d, p_e = np.asarray(p_d, dtype=np.float64), np.asarray(p_e, dtype=np.float64)
    coupling = np.asarray(coupling, dtype=np.float64)
    rho = interface_density(fluid, phase, p_d, p_e)
    if upwind_d is None:
        s_up = upwind_saturation(s_d, s_e, coupling * (p_e - p_d))
    else:
        s_up = np.where(upwind_d, s_d, s_e)
    out = rho * mobility(fluid, phase, s_up) * coupling * (p_d - p_e)
    if gravity_weight is not None:
        w = np.asarray(gravity_weight, dtype=np.float64)
        out = out + rho**2 * (
            mobility(fluid, phase, s_d) * np.maximum(w, 0.0)
            - mobility(fluid, phase, s_e) * np.maximum(-w, 0.0)
        )
    return out


def compute_upwind(context: SchemeContext, p_l: np.ndarray, p_g: np.ndarray) -> np.ndarray:
    """Upwind flags per phase and pair, shape (2, n_pairs), True where D is upwind."""
    dual = context.dual
    trans = context.stiffness.transmissibilities
    return np.stack(
        [trans * (p[dual.pair_e] - p[dual.pair_d]) <= 0.0 for p in (p_l, p_g)]
    )


# --- Residual ---


def evaluate_residual(
    context: SchemeContext,
    p_l: np.ndarray,
    p_g: np.ndarray,
    s_l: np.ndarray,
    prev: State,
    dt: float,
    sources: SourceField,
    upwind: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Residual rows (n_volumes, 2) for arbitrary, possibly unclosed, arrays.

    Rows of Dirichlet volumes are zero.
    """
    fluid, dual = context.fluid, context.dual
    ns = dual.n_volumes
    trans = context.stiffness.transmissibilities
    storage = dual.volumes * context.porosity
    out = np.zeros((ns, 2))

    saturations = (s_l, 1.0 - s_l)
    pressures = (p_l, p_g)
    for a, phase in enumerate(PHASES):
        p, s = pressures[a], saturations[a]
        rho = density(fluid, phase, p)
        rho_prev = density(fluid, phase, prev.pressure(phase))
        out[:, a] = storage * (rho * s - rho_prev * prev.saturation(phase)) / dt
        out[:, a] += dual.volumes * rho * (
            s * sources.production - sources.injected(phase) * sources.injection
        )
        pair_flux = flux(
            fluid,
            phase,
            s[dual.pair_d],
            s[dual.pair_e],
            p[dual.pair_d],
            p[dual.pair_e],
            trans,
            context.gravity_weights,
            None if upwind is None else upwind[a],
        )
        out[:, a] += np.bincount(dual.pair_d, weights=pair_flux, minlength=ns)
        out[:, a] -= np.bincount(dual.pair_e, weights=pair_flux, minlength=ns)

    out[context.dirichlet] = 0.0
    return out


def residual(
    state: State,
    prev: State,
    dt: float,
    context: SchemeContext,
    sources: SourceField,
    upwind: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Residual of both phase equations per dual volume, shape (n_volumes, 2)."""
    return evaluate_residual(
        context, state.p_l, state.p_g, state.s_l, prev, dt, sources, upwind
    )


def residual_jacobian(
    context: SchemeContext,
    p_l: np.ndarray,
    p_g: np.ndarray,
    dt: float,
    sources: SourceField,
    upwind: np.ndarray,
) -> sp.csr_matrix:
    """Analytic Jacobian of the free residual rows with frozen upwind directions.

    Unknowns and rows are interleaved per free volume: index 2 f + phase.
    Saturations follow the extended capillary closure.
    """
    fluid, dual = context.fluid, context.dual
    ns = dual.n_volumes
    trans = context.stiffness.transmissibilities
    storage = dual.volumes * context.porosity
    pc = p_g - p_l
    s_l = extended_saturation(fluid, pc)
    ds = extended_saturation_derivative(fluid, pc)

    # d s_alpha / d p_beta per volume, indexed [alpha][beta]
    dsat = ((-ds, ds), (ds, -ds))
    saturations = (s_l, 1.0 - s_l)
    pressures = (p_l, p_g)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    def add(row_vol: np.ndarray, a: int, col_vol: np.ndarray, b: int, value: np.ndarray) -> None:
        rows.append(2 * row_vol + a)
        cols.append(2 * col_vol + b)
        vals.append(np.broadcast_to(value, row_vol.shape))

    volumes = np.arange(ns)
    d, e = dual.pair_d, dual.pair_e
    w = context.gravity_weights
    w_plus = np.maximum(w, 0.0) if w is not None else None
    w_minus = np.maximum(-w, 0.0) if w is not None else None

    for a, phase in enumerate(PHASES):
        p, s = pressures[a], saturations[a]
        rho = density(fluid, phase, p)
        drho = density_derivative(fluid, phase, p)
        source = s * sources.production - sources.injected(phase) * sources.injection
        for b in range(2):
            value = (storage / dt + dual.volumes * sources.production) * rho * dsat[a][b]
            if a == b:
                value = value + storage / dt * drho * s + dual.volumes * drho * source
            add(volumes, a, volumes, b, value)

        up = upwind[a]
        s_d, s_e = s[d], s[e]
        s_up = np.where(up, s_d, s_e)
        m_up = mobility(fluid, phase, s_up)
        dm_up = mobility_derivative(fluid, phase, s_up)
        rho_de = interface_density(fluid, phase, p[d], p[e])
        drho_pair = interface_density_derivatives(fluid, phase, p[d], p[e])
        delta = p[d] - p[e]
        gravity_term: np.ndarray | float = 0.0
        # d(gravity part)/d s at D and at E, before the rho_DE^2 factor
        dgravity = (np.zeros_like(delta), np.zeros_like(delta))
        if w is not None:
            gravity_term = (
                mobility(fluid, phase, s_d) * w_plus - mobility(fluid, phase, s_e) * w_minus
            )
            dgravity = (
                mobility_derivative(fluid, phase, s_d) * w_plus,
                -mobility_derivative(fluid, phase, s_e) * w_minus,
            )
        rho_factor = m_up * trans * delta + 2.0 * rho_de * gravity_term

        for side, vol in ((0, d), (1, e)):
            sign = 1.0 if side == 0 else -1.0
            is_up = up if side == 0 else ~up
            for b in range(2):
                ds_side = dsat[a][b][vol]
                dflux = rho_de * dm_up * trans * delta * np.where(is_up, ds_side, 0.0)
                dflux = dflux + rho_de**2 * dgravity[side] * ds_side
                if b == a:
                    dflux = dflux + drho_pair[side] * rho_factor + sign * rho_de * m_up * trans
                add(d, a, vol, b, dflux)
                add(e, a, vol, b, -dflux)

    full = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * ns, 2 * ns),
    ).tocsr()
    keep = np.ravel(np.stack([2 * context.free, 2 * context.free + 1], axis=1))
    return full[keep][:, keep].tocsr()
