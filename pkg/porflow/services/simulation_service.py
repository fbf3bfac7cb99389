"""Simulation service: turns a RunConfig into meshes, models and written results.

This is the orchestration layer behind the command-line interface. Everything
numerical lives in the other services; the functions here only wire them
together and write files.
"""

from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel

from config.settings import MeshSection, ModelSection, RunConfig, SourcesSection
from porflow.core.errors import ConfigError
from porflow.core.logger import logger
from porflow.core.models import (
    BoundaryTag,
    ConvergenceRow,
    DualSeminormReport,
    EnergySums,
    FluidModel,
    OutputFormat,
    PrimalMesh,
    RegularityReport,
    SchemeContext,
    SourceField,
    State,
    TimestepReport,
    TransmissibilityReport,
    Trajectory,
)
from porflow.core.storage import (
    write_field_csv,
    write_key_value,
    write_matrix_dump,
    write_vtk,
    write_yaml,
)
from porflow.services.assembly_service import assemble, transmissibility_signs
from porflow.services.diagnostics_service import (
    accumulate_energy,
    refinement_study,
    write_convergence_table,
    write_energy_report,
    write_step_reports,
)
from porflow.services.mesh_service import (
    build_dual,
    dual_seminorm_ratio,
    load_primal,
    refine_uniform,
    regularity,
    unit_square_mesh,
)
from porflow.services.physics_service import build_derived, create_fluid_model
from porflow.services.scheme_service import (
    build_context,
    build_sources,
    project_initial,
    total_mass,
)
from porflow.services.solver_service import get_step_count, run
from porflow.utils.expressions import compile_expression, uses_time
from porflow.utils.formatters import format_step_name

PointField = Callable[[np.ndarray], np.ndarray]
TimeField = Callable[[np.ndarray, float], np.ndarray]


class MeshCheck(BaseModel):
    """Everything check-mesh reports about one mesh."""

    n_vertices: int
    n_elements: int
    n_sides: int
    n_dirichlet: int
    n_pairs: int
    measure: float
    dual_volume_min: float
    dual_volume_max: float
    regularity: RegularityReport
    seminorm: DualSeminormReport
    transmissibility: TransmissibilityReport


class SimulationResult(BaseModel):
    """Outcome of a simulate run."""

    trajectory: Trajectory
    energy: EnergySums
    output_dir: Path
    mass_initial: tuple[float, float]
    mass_final: tuple[float, float]


# --- Construction from configuration ---


def get_mesh(section: MeshSection) -> PrimalMesh:
    """Load or generate the primal mesh and apply the requested refinements."""
    if section.path is not None:
        mesh = load_primal(section.path, section.format)
    else:
        mesh = unit_square_mesh(int(section.unit_square or 1), dirichlet=section.dirichlet)
    for _ in range(section.refinements):
        mesh = refine_uniform(mesh)
    return mesh


def _point_field(spec: float | str) -> PointField:
    evaluate = compile_expression(spec)
    return lambda points: evaluate(points, 0.0)


def get_fluid_model(section: ModelSection) -> FluidModel:
    """FluidModel from the model section; expression porosity becomes a field."""
    porosity: Any = section.porosity
    if isinstance(porosity, str):
        porosity = _point_field(porosity)
    return create_fluid_model(
        section.preset,
        p_max=section.p_max,
        viscosity_liquid=section.viscosity_liquid,
        viscosity_gas=section.viscosity_gas,
        relperm_exponent=section.relperm_exponent,
        rho_liquid=section.rho_liquid,
        rho_gas_ref=section.rho_gas_ref,
        gas_pressure_scale=section.gas_pressure_scale,
        rho_gas_min=section.rho_gas_min,
        rho_gas_max=section.rho_gas_max,
        porosity=porosity,
        permeability=np.asarray(section.permeability, dtype=np.float64),
        gravity=tuple(section.gravity) if section.gravity is not None else None,
    )


def create_context(config: RunConfig) -> SchemeContext:
    """Mesh, dual mesh, stiffness, fluid model and derived tables for a run."""
    mesh = get_mesh(config.mesh)
    dual = build_dual(mesh)
    fluid = get_fluid_model(config.model)
    stiffness = assemble(mesh, dual, fluid.permeability)
    derived = build_derived(fluid, config.model.resolution)
    return build_context(mesh, dual, stiffness, fluid, derived)


def get_initial_state(config: RunConfig, context: SchemeContext) -> State:
    """Project the initial pressures; an initial s_l is turned into p_g by p_c."""
    initial = config.initial
    p_l = _point_field(initial.p_l)
    if initial.p_g is not None:
        p_g = _point_field(initial.p_g)
    else:
        s_l = _point_field(initial.s_l if initial.s_l is not None else 1.0)
        capillary = context.fluid.capillary

        def p_g(points: np.ndarray) -> np.ndarray:
            return p_l(points) + capillary(np.clip(s_l(points), 0.0, 1.0))

    return project_initial(p_l, p_g, context)


def _in_box(points: np.ndarray, box: Sequence[float]) -> np.ndarray:
    inside = np.ones(len(points), dtype=bool)
    for axis in range(points.shape[1]):
        inside &= (points[:, axis] >= box[2 * axis]) & (points[:, axis] <= box[2 * axis + 1])
    return inside


def get_source_fields(section: SourcesSection) -> tuple[TimeField, TimeField, TimeField]:
    """Production, injection and injected saturation as f(points, t).

    Region rates add to the base fields; inside an injecting region its
    injected saturation replaces the base one.
    """
    production = compile_expression(section.production)
    injection = compile_expression(section.injection)
    injected = compile_expression(section.injected_liquid)
    regions = section.regions

    def total_production(points: np.ndarray, t: float) -> np.ndarray:
        values = production(points, t)
        for region in regions:
            values = values + region.production * _in_box(points, region.box)
        return values

    def total_injection(points: np.ndarray, t: float) -> np.ndarray:
        values = injection(points, t)
        for region in regions:
            values = values + region.injection * _in_box(points, region.box)
        return values

    def injected_liquid(points: np.ndarray, t: float) -> np.ndarray:
        values = injected(points, t)
        for region in regions:
            if region.injection > 0.0:
                values = np.where(_in_box(points, region.box), region.injected_liquid, values)
        return values

    return total_production, total_injection, injected_liquid


def get_sources(
    section: SourcesSection, context: SchemeContext
) -> SourceField | Callable[[float], SourceField]:
    """Sources for solver.run: fixed when nothing depends on t, else per step."""
    production, injection, injected = get_source_fields(section)
    specs = (section.production, section.injection, section.injected_liquid)
    if not any(uses_time(spec) for spec in specs):
        return build_sources(context, production, injection, injected, 0.0)
    return lambda t_mid: build_sources(context, production, injection, injected, t_mid)


# --- Commands ---


def write_fields(
    output_dir: Path,
    state: State,
    context: SchemeContext,
    formats: Sequence[OutputFormat],
    n_steps: int,
) -> None:
    """Write one state as CSV and/or legacy VTK, named by step."""
    name = f"state_{format_step_name(state.step, n_steps)}"
    points = context.dual.centres
    if OutputFormat.CSV in formats:
        write_field_csv(
            output_dir / "fields" / f"{name}.csv", points, state.p_l, state.p_g, state.s_l
        )
    if OutputFormat.VTK in formats:
        write_vtk(
            output_dir / "fields" / f"{name}.vtk",
            points,
            {"p_l": state.p_l, "p_g": state.p_g, "s_l": state.s_l},
            title=f"porflow step {state.step} t={state.time!r}",
        )


def simulate(config: RunConfig, output_dir: Optional[Path] = None) -> SimulationResult:
    """Run a configured simulation and write fields, step reports and a summary.

    Raises:
        ConfigError: no time section
        NonConvergenceError: a step failed after all fallbacks
    """
    if config.time is None:
        raise ConfigError("Simulation needs a 'time' section with dt and t_final")
    output_dir = Path(output_dir or config.output.directory)
    context = create_context(config)
    initial = get_initial_state(config, context)
    sources = get_sources(config.sources, context)
    n_steps = get_step_count(config.time.t_final, config.time.dt)
    formats = config.output.formats
    cadence = config.output.cadence

    write_yaml(output_dir / "config.yaml", config.model_dump(mode="json"))
    write_fields(output_dir, initial, context, formats, n_steps)

    def on_step(state: State, report: TimestepReport) -> None:
        if state.step % cadence == 0 or state.step == n_steps:
            write_fields(output_dir, state, context, formats, n_steps)

    logger.info(
        f"Simulating {n_steps} steps of dt={config.time.dt} on "
        f"{context.mesh.n_elements} elements into {output_dir}"
    )
    trajectory = run(
        initial,
        config.time.t_final,
        config.time.dt,
        context,
        sources,
        config.solver,
        on_step=on_step,
    )

    final = trajectory.states[-1]
    write_field_csv(
        output_dir / "final_state.csv", context.dual.centres, final.p_l, final.p_g, final.s_l
    )
    write_step_reports(output_dir / "steps.csv", trajectory.reports)
    energy = accumulate_energy(trajectory, context)
    write_energy_report(output_dir / "energy.txt", energy)

    mass_initial = total_mass(initial, context)
    mass_final = total_mass(final, context)
    write_key_value(
        output_dir / "summary.txt",
        {
            "steps": n_steps,
            "dt": config.time.dt,
            "t_final": config.time.t_final,
            "elements": context.mesh.n_elements,
            "dual_volumes": context.dual.n_volumes,
            "newton_iterations": sum(r.iterations for r in trajectory.reports),
            "dt_halvings": sum(len(r.substeps) - 1 for r in trajectory.reports),
            "max_principle_passed": all(r.max_principle_passed for r in trajectory.reports),
            "mass_liquid_initial": mass_initial[0],
            "mass_gas_initial": mass_initial[1],
            "mass_liquid_final": mass_final[0],
            "mass_gas_final": mass_final[1],
        },
    )
    return SimulationResult(
        trajectory=trajectory,
        energy=energy,
        output_dir=output_dir,
        mass_initial=mass_initial,
        mass_final=mass_final,
    )


def check_mesh(
    path: Path,
    permeability: Optional[Sequence[float]] = None,
    dump_matrix: Optional[Path] = None,
    samples: int = 100,
) -> MeshCheck:
    """Regularity, dual-mesh statistics and transmissibility signs of a mesh file.

    ``permeability`` is one value (scalar Lambda), d values (diagonal) or d*d
    values (full tensor, row-major).
    """
    mesh = load_primal(path)
    dual = build_dual(mesh)
    stiffness = assemble(mesh, dual, get_permeability(permeability, mesh.dim))
    if dump_matrix is not None:
        write_matrix_dump(dump_matrix, stiffness.matrix)
    return MeshCheck(
        n_vertices=mesh.n_vertices,
        n_elements=mesh.n_elements,
        n_sides=mesh.n_sides,
        n_dirichlet=int(np.count_nonzero(mesh.side_tags == BoundaryTag.DIRICHLET)),
        n_pairs=dual.n_pairs,
        measure=mesh.measure,
        dual_volume_min=float(dual.volumes.min()),
        dual_volume_max=float(dual.volumes.max()),
        regularity=regularity(mesh),
        seminorm=dual_seminorm_ratio(mesh, dual, samples=samples),
        transmissibility=transmissibility_signs(stiffness),
    )


def get_permeability(values: Optional[Sequence[float]], dim: int) -> np.ndarray | float:
    """Interpret --lambda values as scalar, diagonal or full tensor."""
    if not values:
        return 1.0
    array = np.asarray(values, dtype=np.float64)
    if array.size == 1:
        return float(array[0])
    if array.size == dim:
        return np.diag(array)
    if array.size == dim * dim:
        return array.reshape(dim, dim)
    raise ConfigError(f"--lambda takes 1, {dim} or {dim * dim} values, got {array.size}")


def convergence(
    config: RunConfig, levels: Optional[int] = None, output: Optional[Path] = None
) -> list[ConvergenceRow]:
    """Refinement study of the configured manufactured problem, written as CSV."""
    section = config.convergence
    rows = refinement_study(section.problem, levels or section.levels, section.base_cells)
    path = output or Path(config.output.directory) / "convergence.csv"
    write_convergence_table(path, rows)
    return rows
