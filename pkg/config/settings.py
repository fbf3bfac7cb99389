"""Run configuration management using pydantic models and YAML files."""

import os
from pathlib import Path
from typing import Optional

import yaml
from dotenv import load_dotenv
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from porflow.core.errors import ConfigError
from porflow.core.models import MeshFormat, OutputFormat, SolverConfig
from porflow.core.storage import read_yaml
from porflow.utils.expressions import check_expression
from porflow.utils.validators import (
    is_time_multiple,
    is_unit_interval,
    is_valid_box,
    sanitize_name,
)

OUTPUT_DIR_ENV = "PORFLOW_OUTPUT_DIR"

# Constant or analytic expression in x, y, z (and t for sources)
Expression = float | str


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MeshSection(_Section):
    """Either a mesh file or a generated unit-square mesh."""

    path: Optional[Path] = None
    format: MeshFormat = MeshFormat.TEXT
    unit_square: Optional[int] = Field(default=None, ge=1)
    dirichlet: list[str] = Field(default_factory=lambda: ["left"])
    refinements: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _one_source(self) -> "MeshSection":
        if (self.path is None) == (self.unit_square is None):
            raise ValueError("set exactly one of 'path' and 'unit_square'")
        return self


class ModelSection(_Section):
    """Preset name plus coefficient overrides; see create_fluid_model."""

    preset: str = "quadratic-linear"
    p_max: float = 1.0
    viscosity_liquid: float = 1.0
    viscosity_gas: float = 1.0
    relperm_exponent: float = 2.0
    rho_liquid: float = 1.0
    rho_gas_ref: float = 1.0
    gas_pressure_scale: float = 10.0
    rho_gas_min: float = 0.5
    rho_gas_max: float = 2.0
    porosity: Expression = 0.3
    permeability: float | list[list[float]] = 1.0
    gravity: Optional[list[float]] = None
    resolution: int = Field(default=4096, ge=16)

    @field_validator("preset")
    @classmethod
    def _normalize_preset(cls, value: str) -> str:
        return sanitize_name(value)


class InitialSection(_Section):
    """Initial phase pressures; ``s_l`` replaces ``p_g`` through the closure."""

    p_l: Expression = 0.0
    p_g: Optional[Expression] = None
    s_l: Optional[Expression] = None

    @model_validator(mode="after")
    def _one_gas_field(self) -> "InitialSection":
        if self.p_g is None and self.s_l is None:
            self.s_l = 1.0
        if self.p_g is not None and self.s_l is not None:
            raise ValueError("set at most one of 'p_g' and 's_l'")
        return self


class SourceRegion(_Section):
    """Constant rates on an axis-aligned box ``[xmin, xmax, ymin, ymax(, zmin, zmax)]``."""

    box: list[float]
    production: float = Field(default=0.0, ge=0.0)
    injection: float = Field(default=0.0, ge=0.0)
    injected_liquid: float = Field(default=1.0, ge=0.0, le=1.0)


class SourcesSection(_Section):
    production: Expression = 0.0
    injection: Expression = 0.0
    injected_liquid: Expression = 1.0
    regions: list[SourceRegion] = Field(default_factory=list)


class TimeSection(_Section):
    dt: float = Field(gt=0.0)
    t_final: float = Field(gt=0.0)


class OutputSection(_Section):
    directory: Path = Path("output")
    cadence: int = Field(default=1, ge=1)
    formats: list[OutputFormat] = Field(
        default_factory=lambda: [OutputFormat.CSV, OutputFormat.VTK]
    )


class ConvergenceSection(_Section):
    problem: str = "sine"
    levels: int = Field(default=3, ge=1)
    base_cells: int = Field(default=4, ge=1)

    @field_validator("problem")
    @classmethod
    def _normalize_problem(cls, value: str) -> str:
        return sanitize_name(value)


class RunConfig(_Section):
    """Complete run configuration."""

    mesh: MeshSection = Field(default_factory=lambda: MeshSection(unit_square=8))
    model: ModelSection = Field(default_factory=ModelSection)
    initial: InitialSection = Field(default_factory=InitialSection)
    sources: SourcesSection = Field(default_factory=SourcesSection)
    time: Optional[TimeSection] = None
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output: OutputSection = Field(default_factory=OutputSection)
    convergence: ConvergenceSection = Field(default_factory=ConvergenceSection)


def _expressions(config: RunConfig) -> list[Expression]:
    fields = [config.model.porosity, config.initial.p_l, config.initial.p_g, config.initial.s_l]
    fields += [config.sources.production, config.sources.injection, config.sources.injected_liquid]
    return [f for f in fields if isinstance(f, str)]


def _check_run_config(config: RunConfig) -> None:
    for text in _expressions(config):
        try:
            check_expression(text)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    s_l = config.initial.s_l
    if isinstance(s_l, float | int) and not is_unit_interval(float(s_l)):
        raise ConfigError(f"initial.s_l must lie in [0, 1], got {s_l}")
    if config.mesh.path is not None and not config.mesh.path.is_file():
        raise ConfigError(f"Mesh file not found: {config.mesh.path}")
    if config.time is not None and not is_time_multiple(config.time.t_final, config.time.dt):
        raise ConfigError(
            f"time.t_final={config.time.t_final} is not a multiple of time.dt={config.time.dt}"
        )
    for k, region in enumerate(config.sources.regions):
        if not (is_valid_box(region.box, 2) or is_valid_box(region.box, 3)):
            raise ConfigError(f"sources.regions[{k}].box is not a valid box: {region.box}")


def load_run_config(config_path: Path | str) -> RunConfig:
    """Load and validate a run configuration from a YAML file.

    Relative mesh paths resolve against the configuration file's directory.
    ``PORFLOW_OUTPUT_DIR`` (environment or ``.env``) overrides output.directory.

    Raises:
        ConfigError: missing file, invalid YAML, schema violation, missing mesh
            file or inconsistent time grid
    """
    load_dotenv()
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"Configuration file not found: {path}")

    try:
        data = read_yaml(path)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    except ValueError as e:
        raise ConfigError(str(e)) from e

    try:
        config = RunConfig(**data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"{path}: {problems}") from e

    mesh_path = config.mesh.path
    if mesh_path is not None and not mesh_path.is_absolute():
        config.mesh.path = (path.parent / mesh_path).resolve()

    override = os.getenv(OUTPUT_DIR_ENV)
    if override:
        config.output.directory = Path(override)

    _check_run_config(config)
    return config
