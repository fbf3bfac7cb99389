"""Write the shipped unit-square mesh family."""

from pathlib import Path

import typer

from porflow.services.mesh_service import unit_square_mesh, write_primal


def main(
    output_dir: Path = typer.Option(Path("data/meshes"), help="Directory for the mesh files"),
    sizes: list[int] = typer.Option([4, 8, 16], "--size", help="Cells per edge"),
) -> None:
    """Generate unit-square meshes with a Dirichlet left side."""
    for n in sizes:
        path = output_dir / f"unit_square_{n}.txt"
        write_primal(path, unit_square_mesh(n, dirichlet=("left",)))
        typer.echo(f"Wrote {path}")


if __name__ == "__main__":
    typer.run(main)
