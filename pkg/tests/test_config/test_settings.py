"""Tests for run configuration loading."""

from pathlib import Path

import pytest

from config.settings import RunConfig, load_run_config
from porflow.core.errors import ConfigError
from porflow.core.models import JacobianMode

ROOT = Path(__file__).resolve().parents[2]


def _write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "run.yaml"
    path.write_text(text, encoding="utf-8")
    return path


def test_reference_config_loads(monkeypatch: pytest.MonkeyPatch) -> None:
    """Test the shipped reference configuration resolves its mesh path."""
    monkeypatch.delenv("PORFLOW_OUTPUT_DIR", raising=False)
    config = load_run_config(ROOT / "data" / "configs" / "reference.yaml")
    assert config.mesh.path == (ROOT / "data" / "meshes" / "unit_square_8.txt").resolve()
    assert config.time is not None and config.time.dt == 0.01
    assert config.solver.jacobian == JacobianMode.FINITE_DIFFERENCE
    assert config.sources.regions[0].injected_liquid == 0.0


def test_defaults() -> None:
    """Test an empty configuration gets a generated mesh and s_l = 1."""
    config = RunConfig()
    assert config.mesh.unit_square == 8
    assert config.initial.s_l == 1.0
    assert config.time is None


def test_empty_file_gives_defaults(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """Test an empty YAML file is a valid configuration."""
    monkeypatch.delenv("PORFLOW_OUTPUT_DIR", raising=False)
    config = load_run_config(_write(tmp_path, ""))
    assert config.output.directory == Path("output")


def test_output_directory_override(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """Test the environment variable overrides output.directory."""
    monkeypatch.setenv("PORFLOW_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    config = load_run_config(_write(tmp_path, "output:\n  directory: results\n"))
    assert config.output.directory == tmp_path / "elsewhere"


def test_names_are_normalized(tmp_path: Path) -> None:
    """Test preset and problem names accept underscores and capitals."""
    config = load_run_config(
        _write(tmp_path, "model:\n  preset: Constant_Density\nconvergence:\n  problem: SINE\n")
    )
    assert config.model.preset == "constant-density"
    assert config.convergence.problem == "sine"


@pytest.mark.parametrize(
    "text",
    [
        "mesh: [1, 2\n",
        "- 1\n- 2\n",
        "solver:\n  newton_tol: -1\n",
        "model:\n  colour: red\n",
        "mesh:\n  path: missing.txt\n",
        "mesh:\n  path: m.txt\n  unit_square: 4\n",
        "time:\n  dt: 0.03\n  t_final: 0.1\n",
        "initial:\n  p_g: 1.0\n  s_l: 0.5\n",
        "initial:\n  s_l: 1.5\n",
        "initial:\n  p_l: 'import os'\n",
        "sources:\n  regions:\n    - box: [1.0, 0.0, 0.0, 1.0]\n      injection: 1.0\n",
        "sources:\n  regions:\n    - box: [0.0, 1.0]\n",
    ],
)
def test_invalid_configs(tmp_path: Path, text: str) -> None:
    """Test invalid configurations raise ConfigError."""
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, text))


def test_validation_message_names_field(tmp_path: Path) -> None:
    """Test schema errors point at the offending key."""
    with pytest.raises(ConfigError, match="solver.newton_max_iter"):
        load_run_config(_write(tmp_path, "solver:\n  newton_max_iter: 0\n"))


def test_missing_config_file(tmp_path: Path) -> None:
    """Test a missing configuration file is reported."""
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "absent.yaml")
