"""Tests for mesh service."""

from pathlib import Path

import numpy as np
import pytest

from porflow.core.errors import (
    DegenerateElementError,
    MeshError,
    MeshParseError,
    MeshTopologyError,
)
from porflow.core.models import BoundaryTag, PrimalMesh
from porflow.services import mesh_service


def test_unit_triangle_sides_and_tags(unit_triangle: PrimalMesh) -> None:
    """Test side enumeration, local ordering and tags of the reference triangle."""
    assert unit_triangle.n_sides == 3
    np.testing.assert_array_equal(unit_triangle.sides, [[0, 1], [0, 2], [1, 2]])
    # local side i is opposite local vertex i
    np.testing.assert_array_equal(unit_triangle.element_sides[0], [2, 1, 0])
    assert np.all(unit_triangle.side_tags == BoundaryTag.DIRICHLET)
    np.testing.assert_allclose(unit_triangle.side_barycentres[2], [0.5, 0.5])


def test_regularity_right_triangle(unit_triangle: PrimalMesh) -> None:
    """Test kappa = |K| / diam^2 for the reference triangle."""
    report = mesh_service.regularity(unit_triangle)
    assert report.kappa == pytest.approx(0.25)
    assert report.h == pytest.approx(np.sqrt(2.0))


def test_regularity_equilateral_triangle() -> None:
    """Test kappa of the unit equilateral triangle."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0]])
    mesh = mesh_service.build_primal(vertices, np.array([[0, 1, 2]]))
    assert mesh_service.regularity(mesh).kappa == pytest.approx(0.4330, abs=1e-4)


def test_dual_volumes_unit_triangle(unit_triangle: PrimalMesh) -> None:
    """Test every dual volume of a single triangle is |K| / 3."""
    dual = mesh_service.build_dual(unit_triangle)
    np.testing.assert_allclose(dual.volumes, 1.0 / 6.0)
    assert dual.n_pairs == 3
    assert not dual.is_interior.any()


def test_tetrahedral_mesh(two_tetrahedra: PrimalMesh) -> None:
    """Test sides, dual volumes and pairs of a two-element 3D mesh."""
    assert two_tetrahedra.dim == 3
    assert two_tetrahedra.n_sides == 7
    assert two_tetrahedra.measure == pytest.approx(0.5)
    dual = mesh_service.build_dual(two_tetrahedra)
    assert dual.volumes.sum() == pytest.approx(0.5, rel=1e-12)
    assert np.count_nonzero(dual.is_interior) == 1
    shared = int(np.flatnonzero(dual.is_interior)[0])
    assert dual.volumes[shared] == pytest.approx(1.0 / 24.0 + 1.0 / 12.0)
    assert dual.n_pairs == 12
    assert mesh_service.regularity(two_tetrahedra).kappa > 0.0


def test_dual_volumes_two_triangles(mesh_dir: Path) -> None:
    """Test the shared diagonal collects a third of each triangle."""
    mesh = mesh_service.load_primal(mesh_dir / "two_triangles.txt")
    dual = mesh_service.build_dual(mesh)
    diagonal = int(np.flatnonzero(mesh.side_elements[:, 1] >= 0)[0])
    assert dual.volumes[diagonal] == pytest.approx(1.0 / 3.0)
    assert dual.volumes.sum() == pytest.approx(mesh.measure)
    assert int(np.count_nonzero(mesh.side_tags == BoundaryTag.DIRICHLET)) == 1
    # the diagonal neighbours all four outer sides
    assert len(dual.neighbors(diagonal)) == 4


def test_dual_pairs_sorted_and_symmetric(square_mesh: PrimalMesh) -> None:
    """Test pair ordering and neighbor symmetry of the dual graph."""
    dual = mesh_service.build_dual(square_mesh)
    assert np.all(dual.pair_d < dual.pair_e)
    for d in range(dual.n_volumes):
        for e in dual.neighbors(d):
            assert d in dual.neighbors(int(e))
    assert np.all(dual.pair_distance > 0.0)
    assert np.all(dual.pair_face_measure > 0.0)


def test_non_manifold_side_rejected() -> None:
    """Test a side shared by three triangles is a topology error."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.5, 2.0]])
    elements = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    with pytest.raises(MeshTopologyError):
        mesh_service.build_primal(vertices, elements)


def test_degenerate_element_rejected() -> None:
    """Test collinear vertices raise DegenerateElementError with the element index."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(DegenerateElementError) as excinfo:
        mesh_service.build_primal(vertices, np.array([[0, 1, 2]]))
    assert excinfo.value.element == 0


def test_overlapping_elements_rejected() -> None:
    """Test two triangles folded onto the same side of their shared edge."""
    vertices = np.array([[1.0, 1.0], [2.0, 1.0], [1.0, 2.0], [1.2, 1.2]])
    with pytest.raises(MeshTopologyError):
        mesh_service.build_primal(vertices, np.array([[0, 1, 2], [0, 1, 3]]))


def test_listed_interior_side_rejected() -> None:
    """Test a boundary tag on an interior side is refused."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    elements = np.array([[0, 1, 2], [0, 2, 3]])
    with pytest.raises(MeshTopologyError):
        mesh_service.build_primal(vertices, elements, np.array([[0, 2]]), np.array([1]))


def test_unknown_tag_rejected() -> None:
    """Test tag values other than 0 and 1 are parse errors."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshParseError):
        mesh_service.build_primal(vertices, np.array([[0, 1, 2]]), np.array([[0, 1]]), [5])


def test_conflicting_tags_rejected() -> None:
    """Test one side listed twice with different tags."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshTopologyError):
        mesh_service.build_primal(
            vertices, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 0]]), np.array([0, 1])
        )


def test_malformed_file_rejected(tmp_path: Path) -> None:
    """Test a header with the wrong number of entries."""
    path = tmp_path / "bad.txt"
    path.write_text("2 3 1\n0 0\n1 0\n0 1\n0 1 2\n")
    with pytest.raises(MeshParseError):
        mesh_service.load_primal(path)


def test_unit_square_mesh_counts() -> None:
    """Test the structured mesh has the expected sizes and Dirichlet sides."""
    mesh = mesh_service.unit_square_mesh(4, dirichlet=("left", "top"))
    assert mesh.n_elements == 32
    assert mesh.n_sides == 56
    assert int(np.count_nonzero(mesh.side_tags == BoundaryTag.DIRICHLET)) == 8
    assert mesh.measure == pytest.approx(1.0)


def test_unit_square_mesh_rejects_unknown_edge() -> None:
    """Test edge names are validated."""
    with pytest.raises(MeshError):
        mesh_service.unit_square_mesh(2, dirichlet=("north",))


def test_shipped_mesh_matches_generator(mesh_dir: Path) -> None:
    """Test the shipped 4 x 4 file equals the generated mesh."""
    loaded = mesh_service.load_primal(mesh_dir / "unit_square_4.txt")
    generated = mesh_service.unit_square_mesh(4)
    np.testing.assert_allclose(loaded.vertices, generated.vertices)
    np.testing.assert_array_equal(loaded.sides, generated.sides)
    np.testing.assert_array_equal(loaded.side_tags, generated.side_tags)


def test_refine_uniform(square_mesh: PrimalMesh) -> None:
    """Test red refinement quadruples elements and keeps measure, shape and tags."""
    fine = mesh_service.refine_uniform(square_mesh)
    assert fine.n_elements == 4 * square_mesh.n_elements
    assert fine.measure == pytest.approx(square_mesh.measure)
    coarse_report = mesh_service.regularity(square_mesh)
    fine_report = mesh_service.regularity(fine)
    assert fine_report.kappa == pytest.approx(coarse_report.kappa)
    assert fine_report.h == pytest.approx(coarse_report.h / 2.0)
    dirichlet = BoundaryTag.DIRICHLET
    assert np.count_nonzero(fine.side_tags == dirichlet) == 2 * np.count_nonzero(
        square_mesh.side_tags == dirichlet
    )


def test_write_and_load_round_trip(square_mesh: PrimalMesh, tmp_path: Path) -> None:
    """Test writing a mesh and loading it back reproduces it."""
    path = tmp_path / "square.txt"
    mesh_service.write_primal(path, square_mesh)
    loaded = mesh_service.load_primal(path)
    np.testing.assert_array_equal(loaded.vertices, square_mesh.vertices)
    np.testing.assert_array_equal(loaded.elements, square_mesh.elements)
    np.testing.assert_array_equal(loaded.side_tags, square_mesh.side_tags)


def test_broken_seminorm_of_linear_field(square_mesh: PrimalMesh) -> None:
    """Test u = x sampled at side barycentres has seminorm |Omega|."""
    u = square_mesh.side_barycentres[:, 0]
    assert mesh_service.calculate_broken_seminorm(square_mesh, u) == pytest.approx(1.0)


def test_dual_pieces_integrate_linears(square_mesh: PrimalMesh) -> None:
    """Test the piece barycentre rule is exact for linear functions."""
    _, points, weights = mesh_service.get_dual_pieces(square_mesh)
    assert np.sum(weights) == pytest.approx(1.0)
    assert np.sum(weights * (2.0 * points[:, 0] + points[:, 1])) == pytest.approx(1.5)


def test_dual_seminorm_ratio_bounded(square_mesh: PrimalMesh) -> None:
    """Test the dual-face seminorm stays below its regularity bound."""
    dual = mesh_service.build_dual(square_mesh)
    report = mesh_service.dual_seminorm_ratio(square_mesh, dual, samples=50)
    assert report.passed
    assert report.bound == pytest.approx(3.0 / (2.0 * 0.25))
