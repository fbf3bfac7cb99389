"""Pytest configuration and fixtures."""

from pathlib import Path

import numpy as np
import pytest

from porflow.core.models import DerivedFunctions, FluidModel, PrimalMesh, SchemeContext
from porflow.services.assembly_service import assemble
from porflow.services.mesh_service import build_dual, build_primal, load_primal, unit_square_mesh
from porflow.services.physics_service import build_derived, create_fluid_model
from porflow.services.scheme_service import build_context

MESH_DIR = Path(__file__).resolve().parent.parent / "data" / "meshes"


@pytest.fixture
def mesh_dir() -> Path:
    """Directory of the shipped mesh files."""
    return MESH_DIR


@pytest.fixture
def unit_triangle() -> PrimalMesh:
    """Reference right triangle (0,0), (1,0), (0,1)."""
    return load_primal(MESH_DIR / "unit_triangle.txt")


@pytest.fixture
def closed_square() -> PrimalMesh:
    """Unit square of two triangles with impervious boundary (closed system)."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return build_primal(vertices, np.array([[0, 1, 2], [0, 2, 3]]))


@pytest.fixture
def two_tetrahedra() -> PrimalMesh:
    """Reference tetrahedron plus a second one glued on its slanted face."""
    vertices = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]
    )
    return build_primal(vertices, np.array([[0, 1, 2, 3], [1, 2, 3, 4]]))


@pytest.fixture
def closed_square_4() -> PrimalMesh:
    """4 x 4 right-triangle mesh of the unit square, impervious everywhere."""
    return unit_square_mesh(4, dirichlet=())


@pytest.fixture
def square_mesh() -> PrimalMesh:
    """4 x 4 right-triangle mesh of the unit square, Dirichlet on the left."""
    return unit_square_mesh(4)


@pytest.fixture
def fluid() -> FluidModel:
    """Quadratic mobilities, linear capillary pressure, compressible gas."""
    return create_fluid_model("quadratic-linear")


@pytest.fixture
def derived(fluid: FluidModel) -> DerivedFunctions:
    """Derived tables on a moderate grid."""
    return build_derived(fluid, 1024)


def make_context(mesh: PrimalMesh, fluid: FluidModel, derived: DerivedFunctions) -> SchemeContext:
    """Scheme context with the fluid's permeability."""
    dual = build_dual(mesh)
    return build_context(mesh, dual, assemble(mesh, dual, fluid.permeability), fluid, derived)


@pytest.fixture
def square_context(
    square_mesh: PrimalMesh, fluid: FluidModel, derived: DerivedFunctions
) -> SchemeContext:
    """Scheme context on the 4 x 4 unit square."""
    return make_context(square_mesh, fluid, derived)


@pytest.fixture
def closed_context(
    closed_square: PrimalMesh, fluid: FluidModel, derived: DerivedFunctions
) -> SchemeContext:
    """Scheme context on the closed two-triangle square."""
    return make_context(closed_square, fluid, derived)
