"""Diagnostics service: discrete stability checks on computed states and trajectories.

Read-only functions (``check_*``/``calculate_*``/``get_*``) inspect states;
``write_*`` functions persist reports through the storage layer.
"""

from collections.abc import Callable, Iterable
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse.linalg import spsolve

from porflow.core.errors import ConfigError
from porflow.core.logger import logger
from porflow.core.models import (
    BoundaryTag,
    ConvergenceRow,
    DerivedFunctions,
    DualMesh,
    EnergySums,
    LemmaMargins,
    MaxPrincipleVerdict,
    Phase,
    PrimalMesh,
    SchemeContext,
    State,
    StiffnessMatrix,
    TimestepReport,
    Trajectory,
)
from porflow.core.storage import write_key_value, write_table_csv
from porflow.services.assembly_service import assemble, identity_stiffness
from porflow.services.mesh_service import (
    build_dual,
    get_dual_pieces,
    refine_uniform,
    regularity,
    unit_square_mesh,
)
from porflow.services.physics_service import (
    big_B,
    get_capillary_range,
    global_pressure,
    mobility,
    pbar,
    ptilde,
)
from porflow.services.scheme_service import compute_upwind

MAX_PRINCIPLE_TOL = 1e-10
MARGIN_FLOOR = 1e-300

# --- Maximum principle ---


def check_max_principle(state: State, tol: float = MAX_PRINCIPLE_TOL) -> MaxPrincipleVerdict:
    """Pass iff both phase saturations lie in [-tol, 1 + tol] on every dual volume."""
    saturations = np.stack([state.s_l, state.s_g])
    excess = np.maximum(-saturations, saturations - 1.0)
    phase_index, volume = np.unravel_index(int(np.argmax(excess)), excess.shape)
    return MaxPrincipleVerdict(
        passed=bool(excess.max() <= tol),
        s_min=float(saturations.min()),
        s_max=float(saturations.max()),
        worst_index=int(volume),
        worst_phase=(Phase.LIQUID, Phase.GAS)[int(phase_index)],
    )


# --- Pairwise inequalities ---


def _margin(lhs: np.ndarray, rhs: np.ndarray) -> float:
    """Worst (rhs - lhs) normalized by the local scale; >= 0 where lhs <= rhs."""
    if lhs.size == 0:
        return 0.0
    scale = np.maximum(np.abs(lhs) + np.abs(rhs), MARGIN_FLOOR)
    return float(np.min((rhs - lhs) / scale))


def calculate_pair_margins(
    derived: DerivedFunctions,
    s_d: np.ndarray,
    s_e: np.ndarray,
    p_l_d: np.ndarray,
    p_l_e: np.ndarray,
    coupling: Optional[np.ndarray] = None,
) -> LemmaMargins:
    """Worst margins of the five pairwise inequalities with upwinded mobilities.

    Gas pressures follow from the closure p_g = p_l + p_c(s_l). With m0 the
    total-mobility floor, the checks are M_l + M_g >= m0 and, against
    R = M_l (dp_l)^2 + M_g (dp_g)^2: m0 (dp)^2 <= R, (dB)^2 <= R,
    M_l (dpbar)^2 <= R and M_g (dptilde)^2 <= R.
    """
    fluid = derived.fluid
    s_d, s_e = np.asarray(s_d, dtype=np.float64), np.asarray(s_e, dtype=np.float64)
    p_l_d, p_l_e = np.asarray(p_l_d, dtype=np.float64), np.asarray(p_l_e, dtype=np.float64)
    p_g_d = p_l_d + fluid.capillary(s_d)
    p_g_e = p_l_e + fluid.capillary(s_e)
    coupling = np.ones_like(s_d) if coupling is None else np.asarray(coupling, dtype=np.float64)

    up_l = coupling * (p_l_e - p_l_d) <= 0.0
    up_g = coupling * (p_g_e - p_g_d) <= 0.0
    m_l = mobility(fluid, Phase.LIQUID, np.where(up_l, s_d, s_e))
    m_g = mobility(fluid, Phase.GAS, np.where(up_g, 1.0 - s_d, 1.0 - s_e))

    rhs = m_l * (p_l_e - p_l_d) ** 2 + m_g * (p_g_e - p_g_d) ** 2
    d_global = global_pressure(derived, p_l_e, s_e) - global_pressure(derived, p_l_d, s_d)
    d_b = big_B(derived, s_e) - big_B(derived, s_d)
    d_pbar = pbar(derived, s_e) - pbar(derived, s_d)
    d_ptilde = ptilde(derived, s_e) - ptilde(derived, s_d)

    return LemmaMargins(
        n_pairs=int(s_d.size),
        mobility_floor=_margin(np.full_like(m_l, derived.m0), m_l + m_g),
        global_pressure=_margin(derived.m0 * d_global**2, rhs),
        capillary=_margin(d_b**2, rhs),
        pbar=_margin(m_l * d_pbar**2, rhs),
        ptilde=_margin(m_g * d_ptilde**2, rhs),
    )


def random_pair_states(
    derived: DerivedFunctions, n: int = 1000, seed: int = 0, pressure_span: Optional[float] = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Random admissible pair states (s_D, s_E, p_l_D, p_l_E).

    Saturations are uniform on [0, 1]; a quarter of the pairs share one
    saturation to exercise the degenerate branch. Liquid pressures are uniform on
    [-span, span], the span defaulting to the capillary range width.
    """
    rng = np.random.default_rng(seed)
    lo, hi = get_capillary_range(derived.fluid)
    span = pressure_span if pressure_span is not None else max(hi - lo, 1.0)
    s_d = rng.uniform(0.0, 1.0, n)
    s_e = rng.uniform(0.0, 1.0, n)
    same = rng.uniform(size=n) < 0.25
    s_e[same] = s_d[same]
    p_l_d = rng.uniform(-span, span, n)
    p_l_e = rng.uniform(-span, span, n)
    return s_d, s_e, p_l_d, p_l_e


def check_lemma_inequalities(state: State, context: SchemeContext) -> LemmaMargins:
    """Pairwise inequality margins on every neighbor pair of a closed state."""
    dual = context.dual
    s_l = np.clip(state.s_l, 0.0, 1.0)
    # gas pressure of the state is p_l + p_c(s_l) by closure
    return calculate_pair_margins(
        context.derived,
        s_l[dual.pair_d],
        s_l[dual.pair_e],
        state.p_l[dual.pair_d],
        state.p_l[dual.pair_e],
        context.stiffness.transmissibilities,
    )


def _merge_margins(first: Optional[LemmaMargins], second: LemmaMargins) -> LemmaMargins:
    if first is None:
        return second
    return LemmaMargins(
        n_pairs=first.n_pairs + second.n_pairs,
        mobility_floor=min(first.mobility_floor, second.mobility_floor),
        global_pressure=min(first.global_pressure, second.global_pressure),
        capillary=min(first.capillary, second.capillary),
        pbar=min(first.pbar, second.pbar),
        ptilde=min(first.ptilde, second.ptilde),
    )


# --- Energies ---


def _upwinded_mobilities(state: State, context: SchemeContext) -> tuple[np.ndarray, np.ndarray]:
    dual, fluid = context.dual, context.fluid
    upwind = compute_upwind(context, state.p_l, state.p_g)
    s_l = state.s_l
    m_l = mobility(fluid, Phase.LIQUID, np.where(upwind[0], s_l[dual.pair_d], s_l[dual.pair_e]))
    s_g = state.s_g
    m_g = mobility(fluid, Phase.GAS, np.where(upwind[1], s_g[dual.pair_d], s_g[dual.pair_e]))
    return m_l, m_g


def _pair_sum(context: SchemeContext, weights: np.ndarray, values: np.ndarray) -> float:
    """sum_D sum_{E in N(D)} T_DE w (delta values)^2, i.e. twice the unordered pair sum."""
    dual = context.dual
    jumps = values[dual.pair_e] - values[dual.pair_d]
    return 2.0 * float(np.sum(context.stiffness.transmissibilities * weights * jumps**2))


def calculate_step_energy(state: State, context: SchemeContext, dt: float) -> tuple[float, float]:
    """Per-phase increments dt sum_D sum_E T_DE M_up (delta p)^2 of one accepted step."""
    m_l, m_g = _upwinded_mobilities(state, context)
    return (
        dt * _pair_sum(context, m_l, state.p_l),
        dt * _pair_sum(context, m_g, state.p_g),
    )


def accumulate_energy(
    trajectory: Trajectory,
    context: SchemeContext,
    identity: Optional[StiffnessMatrix] = None,
) -> EnergySums:
    """Time-integrated energies and the worst inequality margins along a trajectory.

    Seminorms use the Lambda = I stiffness; it is assembled when not given.
    ``signed`` is set when some transmissibility is negative, in which case the
    pair sums may contain negative terms.
    """
    if identity is None:
        identity = (
            context.stiffness
            if context.stiffness.is_identity
            else identity_stiffness(context.mesh, context.dual)
        )
    derived = context.derived
    sums = EnergySums(signed=bool(np.any(context.stiffness.transmissibilities < 0.0)))
    lemma: Optional[LemmaMargins] = None

    states = trajectory.states
    for prev, state in zip(states[:-1], states[1:], strict=True):
        dt = state.time - prev.time
        s_l = np.clip(state.s_l, 0.0, 1.0)
        m_l, m_g = _upwinded_mobilities(state, context)
        b = big_B(derived, s_l)
        sums.energy_liquid += dt * _pair_sum(context, m_l, state.p_l)
        sums.energy_gas += dt * _pair_sum(context, m_g, state.p_g)
        sums.global_pressure_norm += dt * identity.quadratic_form(
            global_pressure(derived, state.p_l, s_l)
        )
        sums.capillary_norm += dt * identity.quadratic_form(b)
        sums.capillary_dissipation += dt * _pair_sum(context, np.ones_like(m_l), b)
        sums.pbar_energy += dt * _pair_sum(context, m_l, pbar(derived, s_l))
        sums.ptilde_energy += dt * _pair_sum(context, m_g, ptilde(derived, s_l))
        lemma = _merge_margins(lemma, check_lemma_inequalities(state, context))

    sums.lemma = lemma
    logger.debug(
        f"Energy sums over {len(states) - 1} steps: "
        f"E_l={sums.energy_liquid:.6g} E_g={sums.energy_gas:.6g} E_B={sums.capillary_norm:.6g}"
    )
    return sums


# --- Manufactured pure-diffusion problems ---

Field = Callable[[np.ndarray], np.ndarray]


def _sine(points: np.ndarray) -> np.ndarray:
    return np.sin(np.pi * points[:, 0]) * np.sin(np.pi * points[:, 1])


PROBLEMS: dict[str, tuple[Field, Field, np.ndarray]] = {
    "linear": (
        lambda x: 1.0 + 2.0 * x[:, 0] - x[:, 1],
        lambda x: np.zeros(len(x)),
        np.eye(2),
    ),
    "sine": (_sine, lambda x: 2.0 * np.pi**2 * _sine(x), np.eye(2)),
    "sine-anisotropic": (_sine, lambda x: 11.0 * np.pi**2 * _sine(x), np.diag([10.0, 1.0])),
}


def get_problem(name: str) -> tuple[Field, Field, np.ndarray]:
    """Exact solution, forcing and permeability of a manufactured problem."""
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ConfigError(
            f"Unknown manufactured problem {name!r}; choose from {sorted(PROBLEMS)}"
        ) from None


def solve_pure_diffusion(
    mesh: PrimalMesh,
    dual: DualMesh,
    permeability: np.ndarray | float,
    forcing: Field,
    boundary: Field,
) -> np.ndarray:
    """Solve -div(Lambda grad u) = f with u = boundary on Dirichlet sides.

    The steady single-phase, constant-density limit of the scheme: CR stiffness
    plus the dual-volume barycentre-rule source. Returns u per dual volume.
    """
    stiffness = assemble(mesh, dual, permeability)
    dual_index, points, weights = get_dual_pieces(mesh)
    load = np.bincount(dual_index, weights=weights * forcing(points), minlength=mesh.n_sides)

    fixed = np.flatnonzero(~dual.is_interior & (mesh.side_tags == BoundaryTag.DIRICHLET))
    free = np.setdiff1d(np.arange(mesh.n_sides), fixed)
    u = np.zeros(mesh.n_sides)
    u[fixed] = boundary(dual.centres[fixed])

    matrix = stiffness.matrix
    rhs = load[free] - matrix[free][:, fixed] @ u[fixed]
    u[free] = spsolve(matrix[free][:, free].tocsc(), rhs)
    return u


def calculate_l2_error(dual: DualMesh, values: np.ndarray, exact: Field) -> float:
    """Discrete L2 error sqrt(sum_D |D| (u_D - u(Q_D))^2) at side barycentres."""
    diff = values - exact(dual.centres)
    return float(np.sqrt(np.sum(dual.volumes * diff**2)))


def refinement_study(
    problem: str, levels: int, base_cells: int = 4
) -> list[ConvergenceRow]:
    """L2 errors and observed orders on successively red-refined unit-square meshes."""
    if levels < 1:
        raise ConfigError(f"Need at least one refinement level, got {levels}")
    exact, forcing, permeability = get_problem(problem)
    mesh = unit_square_mesh(base_cells, dirichlet=("left", "right", "bottom", "top"))

    rows: list[ConvergenceRow] = []
    for level in range(levels):
        if level > 0:
            mesh = refine_uniform(mesh)
        dual = build_dual(mesh)
        u = solve_pure_diffusion(mesh, dual, permeability, forcing, exact)
        h = regularity(mesh).h
        error = calculate_l2_error(dual, u, exact)
        order = None
        if rows and rows[-1].l2_error > 0.0 and error > 0.0:
            order = float(np.log(rows[-1].l2_error / error) / np.log(rows[-1].h / h))
        rows.append(ConvergenceRow(level=level, h=h, l2_error=error, order=order))
        logger.info(f"Refinement level {level}: h={h:.4g} L2 error={error:.6e} order={order}")
    return rows


# --- Report writers ---


def write_convergence_table(path: str | Path, rows: Iterable[ConvergenceRow]) -> None:
    """CSV with columns level,h,L2_error,order (order empty on the first level)."""
    write_table_csv(
        path,
        [
            {"level": r.level, "h": r.h, "L2_error": r.l2_error, "order": r.order}
            for r in rows
        ],
    )


def write_step_reports(path: str | Path, reports: Iterable[TimestepReport]) -> None:
    """One CSV row per accepted step."""
    write_table_csv(
        path,
        [
            {
                "step": r.step,
                "time": r.time,
                "dt": r.dt,
                "substeps": len(r.substeps),
                "iterations": r.iterations,
                "residual_liquid": r.residual_liquid,
                "residual_gas": r.residual_gas,
                "line_search_activations": r.line_search_activations,
                "clamped": r.clamped,
                "max_clamp": r.max_clamp,
                "max_principle_passed": r.max_principle_passed,
                "s_min": r.s_min,
                "s_max": r.s_max,
                "energy_liquid": r.energy_liquid,
                "energy_gas": r.energy_gas,
            }
            for r in reports
        ],
    )


def write_energy_report(path: str | Path, sums: EnergySums) -> None:
    """key = value summary of the energy sums and inequality margins."""
    values: dict[str, object] = sums.model_dump(exclude={"lemma"})
    if sums.lemma is not None:
        for key, value in sums.lemma.model_dump().items():
            values[f"lemma_{key}"] = value
        values["lemma_passed"] = sums.lemma.passed()
    write_key_value(path, values)
