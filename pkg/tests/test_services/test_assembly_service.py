"""Tests for assembly service."""

from pathlib import Path

import numpy as np
import pytest

from porflow.core.errors import ModelError, PermeabilityError
from porflow.core.models import PrimalMesh
from porflow.services import assembly_service
from porflow.services.mesh_service import build_dual, load_primal


def test_unit_triangle_matrix(unit_triangle: PrimalMesh) -> None:
    """Test the reference-triangle matrix entry by entry."""
    dual = build_dual(unit_triangle)
    matrix = assembly_service.assemble(unit_triangle, dual).matrix.toarray()
    expected = np.array([[2.0, 0.0, -2.0], [0.0, 2.0, -2.0], [-2.0, -2.0, 4.0]])
    np.testing.assert_allclose(matrix, expected, atol=1e-14)


def test_unit_triangle_transmissibilities(unit_triangle: PrimalMesh) -> None:
    """Test transmissibilities are the negated off-diagonal entries."""
    stiffness = assembly_service.assemble(unit_triangle, build_dual(unit_triangle))
    np.testing.assert_array_equal(stiffness.pair_d, [0, 0, 1])
    np.testing.assert_array_equal(stiffness.pair_e, [1, 2, 2])
    np.testing.assert_allclose(stiffness.transmissibilities, [0.0, 2.0, 2.0], atol=1e-14)
    assert stiffness.is_identity


def test_obtuse_triangle_negative_coupling(mesh_dir: Path) -> None:
    """Test the obtuse angle yields one negative transmissibility, which is reported."""
    mesh = load_primal(mesh_dir / "obtuse_triangle.txt")
    stiffness = assembly_service.assemble(mesh, build_dual(mesh))
    report = assembly_service.transmissibility_signs(stiffness)
    assert len(report.negative_pairs) == 1
    d, e, value = report.negative_pairs[0]
    assert (d, e) == (1, 2)
    assert value == pytest.approx(-2.1)
    assert report.nonnegative_fraction == pytest.approx(2.0 / 3.0)


def test_row_sums_vanish_and_symmetric(square_mesh: PrimalMesh) -> None:
    """Test constants lie in the kernel and the matrix is exactly symmetric."""
    tensor = np.array([[2.0, 0.5], [0.5, 1.0]])
    matrix = assembly_service.assemble(square_mesh, build_dual(square_mesh), tensor).matrix
    np.testing.assert_allclose(matrix @ np.ones(square_mesh.n_sides), 0.0, atol=1e-12)
    assert (matrix != matrix.T).nnz == 0


def test_patch_test_piecewise_tensor(square_mesh: PrimalMesh) -> None:
    """Test u^T A u equals the exact energy of a linear u for elementwise Lambda."""
    ne = square_mesh.n_elements
    tensors = np.where(
        (np.arange(ne) % 2 == 0)[:, None, None],
        np.array([[2.0, 0.5], [0.5, 1.0]]),
        np.array([[1.0, 0.0], [0.0, 3.0]]),
    )
    matrix = assembly_service.assemble(square_mesh, build_dual(square_mesh), tensors).matrix
    grad = np.array([1.0, -2.0])
    u = square_mesh.side_barycentres @ grad
    energy = np.einsum("i,kij,j->k", grad, tensors, grad)
    exact = float(np.sum(square_mesh.element_volumes * energy))
    assert u @ (matrix @ u) == pytest.approx(exact, rel=1e-10)


def test_tetrahedral_assembly(two_tetrahedra: PrimalMesh) -> None:
    """Test the 3D matrix is symmetric, annihilates constants and passes the patch test."""
    matrix = assembly_service.assemble(two_tetrahedra, build_dual(two_tetrahedra)).matrix
    np.testing.assert_allclose(matrix @ np.ones(two_tetrahedra.n_sides), 0.0, atol=1e-12)
    assert (matrix != matrix.T).nnz == 0
    u = two_tetrahedra.side_barycentres @ np.array([1.0, 2.0, -1.0])
    assert u @ (matrix @ u) == pytest.approx(6.0 * 0.5)


def test_coercivity_anisotropic(square_mesh: PrimalMesh) -> None:
    """Test u^T A u >= c_Lambda ||u||^2 for a strongly anisotropic tensor."""
    dual = build_dual(square_mesh)
    stiffness = assembly_service.assemble(square_mesh, dual, np.diag([100.0, 1.0]))
    identity = assembly_service.identity_stiffness(square_mesh, dual)
    report = assembly_service.coercivity_check(stiffness, identity, samples=200)
    assert report.passed
    assert report.c_lambda == pytest.approx(1.0)
    assert report.min_ratio >= 1.0
    assert report.worst_vector is None


@pytest.mark.parametrize(
    "tensor",
    [
        np.array([[1.0, 0.0], [0.0, -1.0]]),
        np.array([[1.0, 0.5], [0.0, 1.0]]),
        np.array([[1.0, np.nan], [np.nan, 1.0]]),
    ],
)
def test_invalid_permeability_rejected(unit_triangle: PrimalMesh, tensor: np.ndarray) -> None:
    """Test indefinite, non-symmetric and non-finite tensors raise PermeabilityError."""
    with pytest.raises(PermeabilityError) as excinfo:
        assembly_service.assemble(unit_triangle, build_dual(unit_triangle), tensor)
    assert excinfo.value.element == 0


def test_broken_norm_requires_identity(square_mesh: PrimalMesh) -> None:
    """Test broken_norm refuses a non-identity stiffness matrix."""
    dual = build_dual(square_mesh)
    stiffness = assembly_service.assemble(square_mesh, dual, 3.0)
    with pytest.raises(ModelError):
        assembly_service.broken_norm(np.zeros(square_mesh.n_sides), stiffness)


def test_broken_norm_of_linear_field(square_mesh: PrimalMesh) -> None:
    """Test the quadratic form of u = 2x - y equals |grad u|^2 |Omega| = 5."""
    dual = build_dual(square_mesh)
    identity = assembly_service.identity_stiffness(square_mesh, dual)
    points = square_mesh.side_barycentres
    values = 2.0 * points[:, 0] - points[:, 1]
    assert assembly_service.broken_norm(values, identity) == pytest.approx(5.0)


def test_evaluate_permeability_shapes(square_mesh: PrimalMesh) -> None:
    """Test scalar, tensor, per-element and callable permeabilities."""
    ne = square_mesh.n_elements
    scalar = assembly_service.evaluate_permeability(square_mesh, 2.0)
    assert scalar.shape == (ne, 2, 2)
    np.testing.assert_allclose(scalar[0], 2.0 * np.eye(2))

    per_element = assembly_service.evaluate_permeability(square_mesh, np.arange(1.0, ne + 1.0))
    np.testing.assert_allclose(per_element[-1], ne * np.eye(2))

    field = assembly_service.evaluate_permeability(square_mesh, lambda xs: 1.0 + xs[:, 0])
    np.testing.assert_allclose(
        field[:, 0, 0], 1.0 + square_mesh.element_barycentres[:, 0]
    )

    with pytest.raises(ModelError):
        assembly_service.evaluate_permeability(square_mesh, np.ones(3))
