"""Tests for the command-line interface."""

from pathlib import Path

from typer.testing import CliRunner

from porflow.cli import app

runner = CliRunner()

MESH_DIR = Path(__file__).resolve().parent.parent / "data" / "meshes"

RUN_CONFIG = """
mesh:
  unit_square: 4
initial:
  s_l: 0.3
sources:
  regions:
    - box: [0.75, 1.0, 0.75, 1.0]
      injection: 1.0
      injected_liquid: 0.0
time:
  dt: 0.01
  t_final: 0.02
output:
  directory: {output}
"""


def _write_config(tmp_path: Path, extra: str = "") -> Path:
    path = tmp_path / "run.yaml"
    path.write_text(RUN_CONFIG.format(output=tmp_path / "out") + extra, encoding="utf-8")
    return path


def test_check_mesh_reports_kappa() -> None:
    """Test check-mesh prints the regularity of the reference triangle."""
    result = runner.invoke(app, ["check-mesh", str(MESH_DIR / "unit_triangle.txt")])
    assert result.exit_code == 0
    kappa = [line for line in result.output.splitlines() if line.startswith("kappa")]
    assert kappa and kappa[0].endswith("= 0.25")


def test_check_mesh_lists_negative_coupling(tmp_path: Path) -> None:
    """Test the obtuse triangle reports its negative transmissibility."""
    dump = tmp_path / "matrix.txt"
    result = runner.invoke(
        app,
        ["check-mesh", str(MESH_DIR / "obtuse_triangle.txt"), "--dump-matrix", str(dump)],
    )
    assert result.exit_code == 0
    assert "negative coupling D=1 E=2" in result.output
    assert dump.is_file()


def test_check_mesh_with_tensor() -> None:
    """Test a diagonal --lambda is accepted."""
    result = runner.invoke(
        app,
        ["check-mesh", str(MESH_DIR / "unit_square_4.txt"), "--lambda", "10", "--lambda", "1"],
    )
    assert result.exit_code == 0


def test_check_mesh_malformed(tmp_path: Path) -> None:
    """Test a malformed mesh exits with code 1."""
    path = tmp_path / "bad.txt"
    path.write_text("2 3 1\n")
    result = runner.invoke(app, ["check-mesh", str(path)])
    assert result.exit_code == 1
    assert "Error" in result.output


def test_simulate_succeeds(tmp_path: Path) -> None:
    """Test a short simulation exits with code 0 and writes its summary."""
    result = runner.invoke(app, ["simulate", str(_write_config(tmp_path))])
    assert result.exit_code == 0, result.output
    assert "Simulation finished" in result.output
    assert (tmp_path / "out" / "summary.txt").is_file()


def test_simulate_missing_mesh(tmp_path: Path) -> None:
    """Test a configuration pointing at a missing mesh exits with code 1."""
    path = tmp_path / "run.yaml"
    path.write_text("mesh:\n  path: nowhere.txt\ntime:\n  dt: 0.1\n  t_final: 0.1\n")
    result = runner.invoke(app, ["simulate", str(path)])
    assert result.exit_code == 1


def test_simulate_nonconvergence(tmp_path: Path) -> None:
    """Test solver failure exits with code 2."""
    solver = "solver:\n  newton_max_iter: 1\n  max_dt_halvings: 0\n  newton_tol: 1.0e-14\n"
    result = runner.invoke(app, ["simulate", str(_write_config(tmp_path, solver))])
    assert result.exit_code == 2


def test_convergence_command(tmp_path: Path) -> None:
    """Test the refinement study command with an explicit level count."""
    output = tmp_path / "table.csv"
    path = tmp_path / "conv.yaml"
    path.write_text("convergence:\n  problem: sine\n")
    result = runner.invoke(app, ["convergence", str(path), "--levels", "1", "-o", str(output)])
    assert result.exit_code == 0, result.output
    assert "level 0" in result.output
    assert output.read_text().splitlines()[0] == "level,h,L2_error,order"
