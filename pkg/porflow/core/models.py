"""Data models using Pydantic for type safety.

Array-carrying models are frozen and hold read-only numpy arrays; they are
built once by the services and shared freely afterwards.
"""

from collections.abc import Callable
from enum import Enum, IntEnum
from typing import Any, Optional, Protocol

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field


class Phase(str, Enum):
    """Fluid phases."""

    LIQUID = "liquid"
    GAS = "gas"


class BoundaryTag(IntEnum):
    """Per-side boundary tag. Interior sides carry INTERIOR."""

    INTERIOR = -1
    IMPERVIOUS = 0
    DIRICHLET = 1


class MeshFormat(str, Enum):
    """Supported mesh file formats."""

    TEXT = "text"


class JacobianMode(str, Enum):
    """How the Newton Jacobian is formed."""

    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite-difference"


class LinearSolverKind(str, Enum):
    """Linear solver used inside Newton."""

    DIRECT = "direct"
    ITERATIVE = "iterative"


class OutputFormat(str, Enum):
    """Field output formats."""

    CSV = "csv"
    VTK = "vtk"


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# --- Mesh ---


class PrimalMesh(_ArrayModel):
    """Simplicial triangulation with its sides and geometric quantities."""

    dim: int
    vertices: np.ndarray  # (nv, d)
    elements: np.ndarray  # (ne, d+1)
    sides: np.ndarray  # (ns, d), sorted vertex tuples in lexicographic order
    side_elements: np.ndarray  # (ns, 2), second entry -1 on boundary sides
    element_sides: np.ndarray  # (ne, d+1), side opposite local vertex i
    side_tags: np.ndarray  # (ns,), BoundaryTag values
    element_volumes: np.ndarray
    element_barycentres: np.ndarray
    element_diameters: np.ndarray
    side_measures: np.ndarray
    side_barycentres: np.ndarray
    basis_gradients: np.ndarray  # (ne, d+1, d), CR basis gradient of local side i

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_elements(self) -> int:
        return int(self.elements.shape[0])

    @property
    def n_sides(self) -> int:
        return int(self.sides.shape[0])

    @property
    def boundary_sides(self) -> np.ndarray:
        return np.flatnonzero(self.side_elements[:, 1] < 0)

    @property
    def measure(self) -> float:
        return float(self.element_volumes.sum())


class DualMesh(_ArrayModel):
    """Side-centred dual mesh: one volume per primal side."""

    volumes: np.ndarray  # |D|
    centres: np.ndarray  # Q_D, barycentre of the side
    barycentres: np.ndarray  # barycentre of the dual volume itself
    is_interior: np.ndarray
    neighbor_ptr: np.ndarray  # CSR row pointer into neighbor_idx
    neighbor_idx: np.ndarray
    pair_d: np.ndarray  # unordered neighbor pairs, pair_d < pair_e
    pair_e: np.ndarray
    pair_element: np.ndarray  # K_{D,E}
    pair_distance: np.ndarray  # d_{D,E}
    pair_face_measure: np.ndarray  # |sigma_{D,E}|

    @property
    def n_volumes(self) -> int:
        return int(self.volumes.shape[0])

    @property
    def n_pairs(self) -> int:
        return int(self.pair_d.shape[0])

    def neighbors(self, d: int) -> np.ndarray:
        """Return N(D) as a sorted index array."""
        return self.neighbor_idx[self.neighbor_ptr[d] : self.neighbor_ptr[d + 1]]


class RegularityReport(BaseModel):
    """Shape-regularity summary."""

    kappa: float
    h: float
    worst_element: int


class DualSeminormReport(BaseModel):
    """Sampled ratio of the dual-face seminorm to the broken H1 seminorm."""

    max_ratio: float
    bound: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.bound


# --- Assembly ---


class StiffnessMatrix(_ArrayModel):
    """Crouzeix-Raviart stiffness matrix in inner-product form.

    ``matrix[D, E] = sum_K (Lambda grad phi_E, grad phi_D)_K``; the scheme's
    transmissibility is the negated off-diagonal entry.
    """

    matrix: sp.csr_matrix
    element_tensors: np.ndarray  # (ne, d, d)
    pair_d: np.ndarray
    pair_e: np.ndarray
    pair_element: np.ndarray
    transmissibilities: np.ndarray  # -matrix[pair_d, pair_e]

    @property
    def is_identity(self) -> bool:
        dim = self.element_tensors.shape[1]
        return bool(np.allclose(self.element_tensors, np.eye(dim), rtol=0.0, atol=1e-14))

    def quadratic_form(self, values: np.ndarray) -> float:
        return float(values @ (self.matrix @ values))


class CoercivityReport(BaseModel):
    """Outcome of randomized Rayleigh-quotient sampling."""

    min_ratio: float
    c_lambda: float
    samples: int
    passed: bool
    worst_vector: Optional[list[float]] = None


class TransmissibilityReport(BaseModel):
    """Sign analysis of the transmissibilities."""

    n_pairs: int
    negative_pairs: list[tuple[int, int, float]] = Field(default_factory=list)
    nonnegative_fraction: float


# --- Physics ---


class RelativePermeability(Protocol):
    def __call__(self, s: np.ndarray) -> np.ndarray: ...

    def derivative(self, s: np.ndarray) -> np.ndarray: ...


class CapillaryPressure(Protocol):
    def __call__(self, s: np.ndarray) -> np.ndarray: ...

    def derivative(self, s: np.ndarray) -> np.ndarray: ...


class DensityLaw(Protocol):
    bounds: tuple[float, float]

    def __call__(self, p: np.ndarray) -> np.ndarray: ...

    def derivative(self, p: np.ndarray) -> np.ndarray: ...

    def inverse_integral(self, p: np.ndarray) -> np.ndarray: ...


class PhaseProperties(_ArrayModel):
    """Per-phase constitutive laws."""

    relperm: Any
    viscosity: float = Field(gt=0.0)
    density: Any


class FluidModel(_ArrayModel):
    """Catalogue of constitutive laws for the two-phase model."""

    liquid: PhaseProperties
    gas: PhaseProperties
    capillary: Any
    porosity: float | Callable[[np.ndarray], np.ndarray] = 0.3
    permeability: Any = 1.0
    gravity: Optional[tuple[float, ...]] = None
    preset: str = "custom"

    def phase(self, phase: Phase) -> PhaseProperties:
        return self.liquid if phase == Phase.LIQUID else self.gas


class ModelAssumptions(BaseModel):
    """Sampled structural constants of a fluid model."""

    m0: float
    pc_slope_floor: float
    pc_max: float
    rho_min: float
    rho_max: float
    liquid_mobility_at_zero: float
    gas_mobility_at_zero: float


class DerivedFunctions(_ArrayModel):
    """Tabulated global-pressure functions on a uniform saturation grid."""

    fluid: FluidModel
    grid: np.ndarray
    pbar: np.ndarray
    ptilde: np.ndarray
    gamma: np.ndarray
    big_b: np.ndarray
    pc_at_zero: float
    m0: float
    holder_exponent: float


# --- Scheme ---


class State(_ArrayModel):
    """Discrete unknowns at one time level, one entry per dual volume."""

    p_l: np.ndarray
    p_g: np.ndarray
    s_l: np.ndarray
    step: int = 0
    time: float = 0.0

    @property
    def s_g(self) -> np.ndarray:
        return 1.0 - self.s_l

    def pressure(self, phase: Phase) -> np.ndarray:
        return self.p_l if phase == Phase.LIQUID else self.p_g

    def saturation(self, phase: Phase) -> np.ndarray:
        return self.s_l if phase == Phase.LIQUID else self.s_g


class SourceField(_ArrayModel):
    """Cell-time averaged production/injection rates for one timestep."""

    production: np.ndarray  # f_P per dual volume, 1/s
    injection: np.ndarray  # f_I per dual volume, 1/s
    injected_liquid: np.ndarray  # s^I_l per dual volume

    @property
    def injected_gas(self) -> np.ndarray:
        return 1.0 - self.injected_liquid

    def injected(self, phase: Phase) -> np.ndarray:
        return self.injected_liquid if phase == Phase.LIQUID else self.injected_gas


class SchemeContext(_ArrayModel):
    """Everything the residual needs besides the states."""

    mesh: PrimalMesh
    dual: DualMesh
    stiffness: StiffnessMatrix
    fluid: FluidModel
    derived: DerivedFunctions
    porosity: np.ndarray  # phi_D
    dirichlet: np.ndarray  # bool per dual volume
    free: np.ndarray  # indices of dual volumes carrying residual rows
    gravity_weights: Optional[np.ndarray] = None  # per pair, None when gravity is off


# --- Solver ---


class SolverConfig(BaseModel):
    """Nonlinear solver settings."""

    newton_tol: float = Field(default=1e-9, gt=0.0)
    newton_max_iter: int = Field(default=30, ge=1)
    line_search_shrink: float = Field(default=0.5, gt=0.0, lt=1.0)
    line_search_max_halvings: int = Field(default=8, ge=0)
    jacobian: JacobianMode = JacobianMode.FINITE_DIFFERENCE
    fd_relative_step: float = Field(default=1e-7, gt=0.0)
    pressure_scale: Optional[float] = Field(default=None, gt=0.0)
    linear_solver: LinearSolverKind = LinearSolverKind.DIRECT
    iterative_tol: float = Field(default=1e-12, gt=0.0)
    max_dt_halvings: int = Field(default=10, ge=0)
    residual_floor: float = Field(default=1e-12, gt=0.0)


class TimestepReport(BaseModel):
    """Solver and diagnostic record of one accepted timestep."""

    step: int
    time: float
    dt: float
    substeps: list[float] = Field(default_factory=list)
    iterations: int = 0
    residual_liquid: float = 0.0
    residual_gas: float = 0.0
    line_search_activations: int = 0
    clamped: bool = False
    max_clamp: float = 0.0
    max_principle_passed: Optional[bool] = None
    s_min: Optional[float] = None
    s_max: Optional[float] = None
    energy_liquid: float = 0.0
    energy_gas: float = 0.0


class Trajectory(_ArrayModel):
    """Accepted states of a run with their reports."""

    states: list[State]
    reports: list[TimestepReport] = Field(default_factory=list)

    @property
    def times(self) -> list[float]:
        return [state.time for state in self.states]


# --- Diagnostics ---


class MaxPrincipleVerdict(BaseModel):
    """Result of the saturation bound check."""

    passed: bool
    s_min: float
    s_max: float
    worst_index: int
    worst_phase: Phase


class LemmaMargins(BaseModel):
    """Worst normalized margins (>= 0 means satisfied) over all checked pairs."""

    n_pairs: int
    mobility_floor: float
    global_pressure: float
    capillary: float
    pbar: float
    ptilde: float

    def passed(self, tol: float = 1e-9) -> bool:
        worst = min(
            self.mobility_floor, self.global_pressure, self.capillary, self.pbar, self.ptilde
        )
        return worst >= -tol


class EnergySums(BaseModel):
    """Time-integrated discrete energies along a trajectory."""

    energy_liquid: float = 0.0
    energy_gas: float = 0.0
    global_pressure_norm: float = 0.0
    capillary_norm: float = 0.0
    capillary_dissipation: float = 0.0
    pbar_energy: float = 0.0
    ptilde_energy: float = 0.0
    signed: bool = False
    lemma: Optional[LemmaMargins] = None


class ConvergenceRow(BaseModel):
    """One level of a refinement study."""

    level: int
    h: float
    l2_error: float
    order: Optional[float] = None
