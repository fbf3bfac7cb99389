"""Command-line interface: simulate, check-mesh and convergence."""

from pathlib import Path
from typing import Optional

import typer
from typing_extensions import Annotated

from config.settings import load_run_config
from porflow.core.errors import PorflowError, SolverError
from porflow.core.logger import log_error, set_verbose
from porflow.services import simulation_service
from porflow.utils.formatters import format_float, format_key_values, format_verdict

app = typer.Typer(
    help="Two-phase compressible flow in porous media on simplicial meshes",
    no_args_is_help=True,
)

EXIT_INPUT_ERROR = 1
EXIT_SOLVER_ERROR = 2

VerboseOption = Annotated[
    bool, typer.Option("-v", "--verbose", help="Log every Newton iterate (DEBUG level)")
]


def _fail(error: Exception) -> typer.Exit:
    """Report an error and return the matching exit."""
    code = EXIT_SOLVER_ERROR if isinstance(error, SolverError) else EXIT_INPUT_ERROR
    typer.echo(typer.style(f"Error: {error}", fg=typer.colors.RED, bold=True), err=True)
    return typer.Exit(code=code)


@app.command()
def simulate(
    config_file: Annotated[Path, typer.Argument(help="Run configuration (YAML)")],
    output: Annotated[
        Optional[Path], typer.Option("-o", "--output", help="Output directory")
    ] = None,
    verbose: VerboseOption = False,
) -> None:
    """Run a simulation and write fields, step reports and energy sums."""
    set_verbose(verbose)
    try:
        config = load_run_config(config_file)
        result = simulation_service.simulate(config, output)
    except (PorflowError, ValueError) as e:
        log_error("simulate", e)
        raise _fail(e) from e

    reports = result.trajectory.reports
    typer.echo(typer.style("Simulation finished", fg=typer.colors.GREEN, bold=True))
    summary = {
        "steps": len(reports),
        "newton_iterations": sum(r.iterations for r in reports),
        "max_principle": format_verdict(all(r.max_principle_passed for r in reports)),
        "mass_liquid_change": result.mass_final[0] - result.mass_initial[0],
        "mass_gas_change": result.mass_final[1] - result.mass_initial[1],
        "output": str(result.output_dir),
    }
    for line in format_key_values(summary):
        typer.echo(line)


@app.command("check-mesh")
def check_mesh(
    mesh_file: Annotated[Path, typer.Argument(help="Mesh file (text format)")],
    permeability: Annotated[
        Optional[list[float]],
        typer.Option(
            "--lambda",
            help="Permeability: 1 value (scalar), d values (diagonal) or d*d values",
        ),
    ] = None,
    dump_matrix: Annotated[
        Optional[Path], typer.Option("--dump-matrix", help="Write the stiffness matrix here")
    ] = None,
    verbose: VerboseOption = False,
) -> None:
    """Report regularity, dual-mesh statistics and transmissibility signs."""
    set_verbose(verbose)
    try:
        report = simulation_service.check_mesh(mesh_file, permeability, dump_matrix)
    except (PorflowError, ValueError) as e:
        log_error("check-mesh", e)
        raise _fail(e) from e

    trans = report.transmissibility
    values = {
        "vertices": report.n_vertices,
        "elements": report.n_elements,
        "sides": report.n_sides,
        "dirichlet_sides": report.n_dirichlet,
        "pairs": report.n_pairs,
        "measure": report.measure,
        "kappa": report.regularity.kappa,
        "h": report.regularity.h,
        "worst_element": report.regularity.worst_element,
        "dual_volume_min": report.dual_volume_min,
        "dual_volume_max": report.dual_volume_max,
        "seminorm_ratio": report.seminorm.max_ratio,
        "seminorm_bound": report.seminorm.bound,
        "seminorm_check": format_verdict(report.seminorm.passed),
        "nonnegative_fraction": trans.nonnegative_fraction,
        "negative_pairs": len(trans.negative_pairs),
    }
    for line in format_key_values(values):
        typer.echo(line)
    for d, e, value in trans.negative_pairs:
        typer.echo(f"negative coupling D={d} E={e} value={format_float(value, 17)}")


@app.command()
def convergence(
    config_file: Annotated[Path, typer.Argument(help="Run configuration (YAML)")],
    levels: Annotated[
        Optional[int], typer.Option("--levels", min=1, help="Number of refinement levels")
    ] = None,
    output: Annotated[
        Optional[Path], typer.Option("-o", "--output", help="CSV file for the error table")
    ] = None,
    verbose: VerboseOption = False,
) -> None:
    """Manufactured-solution refinement study; writes level,h,L2_error,order."""
    set_verbose(verbose)
    try:
        config = load_run_config(config_file)
        rows = simulation_service.convergence(config, levels, output)
    except (PorflowError, ValueError) as e:
        log_error("convergence", e)
        raise _fail(e) from e

    for row in rows:
        order = "" if row.order is None else format_float(row.order, 4)
        typer.echo(
            f"level {row.level}: h={format_float(row.h, 4)} "
            f"L2_error={format_float(row.l2_error, 6)} order={order}"
        )


if __name__ == "__main__":
    app()
