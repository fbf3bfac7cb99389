"""Assembly service: Crouzeix-Raviart stiffness couplings and their analysis."""

from typing import Any

import numpy as np
import scipy.sparse as sp

from porflow.core.errors import ModelError, PermeabilityError
from porflow.core.logger import logger
from porflow.core.models import (
    CoercivityReport,
    DualMesh,
    PrimalMesh,
    StiffnessMatrix,
    TransmissibilityReport,
)

SYMMETRY_RTOL = 1e-12
NEGATIVE_RTOL = 1e-14
COERCIVITY_RTOL = 1e-10
KERNEL_RTOL = 1e-12


def evaluate_permeability(mesh: PrimalMesh, permeability: Any) -> np.ndarray:
    """Evaluate Lambda per element as an (ne, d, d) array.

    Accepts a scalar, a d x d tensor, per-element scalars or tensors, or a
    callable of the element barycentres returning any of those shapes.
    """
    ne, d = mesh.n_elements, mesh.dim
    if callable(permeability):
        permeability = permeability(mesh.element_barycentres)
    values = np.asarray(permeability, dtype=np.float64)

    if values.ndim == 0:
        tensors = np.broadcast_to(values * np.eye(d), (ne, d, d))
    elif values.shape == (d, d):
        tensors = np.broadcast_to(values, (ne, d, d))
    elif values.shape == (ne,):
        tensors = values[:, None, None] * np.eye(d)
    elif values.shape == (ne, d, d):
        tensors = values
    else:
        raise ModelError(
            f"Permeability of shape {values.shape} does not fit {ne} elements in {d}D"
        )
    return np.array(tensors)


def _validate_tensors(tensors: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(tensors)):
        k = int(np.flatnonzero(~np.isfinite(tensors).all(axis=(1, 2)))[0])
        raise PermeabilityError(k, "non-finite entries")
    scale = np.abs(tensors).max(axis=(1, 2))
    asym = np.abs(tensors - np.swapaxes(tensors, 1, 2)).max(axis=(1, 2))
    bad = asym > SYMMETRY_RTOL * np.maximum(scale, 1e-300)
    if bad.any():
        raise PermeabilityError(int(np.flatnonzero(bad)[0]), "tensor is not symmetric")
    tensors = 0.5 * (tensors + np.swapaxes(tensors, 1, 2))
    smallest = np.linalg.eigvalsh(tensors)[:, 0]
    if np.any(smallest <= 0.0):
        k = int(np.flatnonzero(smallest <= 0.0)[0])
        raise PermeabilityError(
            k, f"tensor is not positive definite (eigenvalue {smallest[k]:.3e})"
        )
    return tensors


def assemble(mesh: PrimalMesh, dual: DualMesh, permeability: Any = 1.0) -> StiffnessMatrix:
    """Assemble A[D, E] = sum_K (Lambda grad phi_E, grad phi_D)_K.

    Element loop in index order; each off-diagonal entry comes from the single
    element K_DE, so the matrix is exactly symmetric.

    Raises:
        PermeabilityError: Lambda not symmetric positive definite on some element
    """
    tensors = _validate_tensors(evaluate_permeability(mesh, permeability))
    grads = mesh.basis_gradients
    local = mesh.element_volumes[:, None, None] * np.einsum(
        "kia,kab,kjb->kij", grads, tensors, grads
    )
    local = 0.5 * (local + np.swapaxes(local, 1, 2))

    d1 = mesh.dim + 1
    rows = np.repeat(mesh.element_sides, d1, axis=1).ravel()
    cols = np.tile(mesh.element_sides, (1, d1)).ravel()
    ns = mesh.n_sides
    matrix = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(ns, ns)).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()

    transmissibilities = -np.asarray(matrix[dual.pair_d, dual.pair_e]).ravel()
    kernel = np.abs(matrix @ np.ones(ns)).max()
    if kernel > KERNEL_RTOL * np.abs(matrix.diagonal()).max():
        logger.warning(f"Stiffness row sums not zero (max {kernel:.3e})")

    for array in (tensors, transmissibilities):
        array.flags.writeable = False
    logger.debug(f"Assembled stiffness: {ns} x {ns}, nnz={matrix.nnz}")
    return StiffnessMatrix(
        matrix=matrix,
        element_tensors=tensors,
        pair_d=dual.pair_d,
        pair_e=dual.pair_e,
        pair_element=dual.pair_element,
        transmissibilities=transmissibilities,
    )


def identity_stiffness(mesh: PrimalMesh, dual: DualMesh) -> StiffnessMatrix:
    """Stiffness matrix for Lambda = I; its quadratic form is the broken seminorm."""
    return assemble(mesh, dual, 1.0)


def broken_norm(values: np.ndarray, identity: StiffnessMatrix) -> float:
    """Squared broken seminorm ||u_h||^2 = sum_K integral_K |grad u_h|^2."""
    if not identity.is_identity:
        raise ModelError("broken_norm needs the Lambda = I stiffness matrix")
    return identity.quadratic_form(np.asarray(values, dtype=np.float64))


def coercivity_check(
    stiffness: StiffnessMatrix,
    identity: StiffnessMatrix,
    samples: int = 1000,
    seed: int = 0,
) -> CoercivityReport:
    """Sample u^T A u / ||u||^2 over random non-constant vectors.

    c_Lambda is the smallest eigenvalue of Lambda over all elements.
    """
    c_lambda = float(np.linalg.eigvalsh(stiffness.element_tensors)[:, 0].min())
    n = stiffness.matrix.shape[0]
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((n, samples))
    vectors -= vectors.mean(axis=0)

    numerator = np.einsum("ij,ij->j", vectors, stiffness.matrix @ vectors)
    denominator = np.einsum("ij,ij->j", vectors, identity.matrix @ vectors)
    ratios = numerator / denominator
    worst = int(np.argmin(ratios))
    min_ratio = float(ratios[worst])
    passed = min_ratio >= c_lambda * (1.0 - COERCIVITY_RTOL)
    if not passed:
        logger.warning(f"Coercivity violated: ratio {min_ratio:.6g} < c_Lambda {c_lambda:.6g}")
    return CoercivityReport(
        min_ratio=min_ratio,
        c_lambda=c_lambda,
        samples=samples,
        passed=passed,
        worst_vector=None if passed else vectors[:, worst].tolist(),
    )


def transmissibility_signs(stiffness: StiffnessMatrix) -> TransmissibilityReport:
    """List pairs whose transmissibility is negative (relative to the largest diagonal)."""
    threshold = NEGATIVE_RTOL * float(np.abs(stiffness.matrix.diagonal()).max())
    trans = stiffness.transmissibilities
    negative = np.flatnonzero(trans < -threshold)
    n_pairs = len(trans)
    return TransmissibilityReport(
        n_pairs=n_pairs,
        negative_pairs=[
            (int(stiffness.pair_d[k]), int(stiffness.pair_e[k]), float(trans[k])) for k in negative
        ],
        nonnegative_fraction=1.0 - len(negative) / n_pairs if n_pairs else 1.0,
    )
