"""Mesh service: primal simplicial meshes, side-centred dual meshes, regularity.

All functions are pure; meshes are frozen once built.
"""

import itertools
import math
from collections.abc import Iterable
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from porflow.core.errors import (
    DegenerateElementError,
    MeshError,
    MeshParseError,
    MeshTopologyError,
)
from porflow.core.logger import logger
from porflow.core.models import (
    BoundaryTag,
    DualMesh,
    DualSeminormReport,
    MeshFormat,
    PrimalMesh,
    RegularityReport,
)
from porflow.core.storage import read_mesh_text, write_mesh_text

PARTITION_RTOL = 1e-12
DOMAIN_MEASURE_RTOL = 1e-10
DEGENERATE_RTOL = 1e-12

_SQUARE_EDGES = ("left", "right", "bottom", "top")


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True, order="C")
    array.flags.writeable = False
    return array


def simplex_measure(points: np.ndarray) -> np.ndarray:
    """Measure of k-simplices given as ``(..., k+1, d)`` vertex arrays (Gram determinant)."""
    edges = points[..., 1:, :] - points[..., :1, :]
    k = edges.shape[-2]
    gram = edges @ np.swapaxes(edges, -1, -2)
    return np.sqrt(np.clip(np.linalg.det(gram), 0.0, None)) / math.factorial(k)


# --- Primal mesh ---


def load_primal(path: str | Path, fmt: MeshFormat = MeshFormat.TEXT) -> PrimalMesh:
    """Load and validate a primal mesh file."""
    if MeshFormat(fmt) is not MeshFormat.TEXT:
        raise MeshParseError(f"Unsupported mesh format: {fmt}")
    dim, vertices, elements, sides, tags = read_mesh_text(path)
    mesh = build_primal(vertices, elements, sides, tags)
    logger.info(
        f"Loaded mesh {path}: d={dim}, {mesh.n_vertices} vertices, "
        f"{mesh.n_elements} elements, {mesh.n_sides} sides"
    )
    return mesh


def write_primal(path: str | Path, mesh: PrimalMesh) -> None:
    """Write a mesh in the text format, listing every boundary side with its tag."""
    boundary = mesh.boundary_sides
    write_mesh_text(
        path, mesh.vertices, mesh.elements, mesh.sides[boundary], mesh.side_tags[boundary]
    )


def build_primal(
    vertices: np.ndarray,
    elements: np.ndarray,
    listed_sides: np.ndarray | None = None,
    listed_tags: np.ndarray | None = None,
) -> PrimalMesh:
    """Build a PrimalMesh from raw arrays, enumerating and tagging sides.

    Sides are numbered in lexicographic order of their sorted vertex tuples.
    Boundary sides not listed default to IMPERVIOUS.

    Raises:
        MeshTopologyError: bad indices, non-manifold sides, tags on interior
            sides, overlapping elements
        DegenerateElementError: element of (numerically) zero volume
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    elements = np.asarray(elements, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
        raise MeshError(f"Vertices must be an (nv, 2|3) array, got shape {vertices.shape}")
    dim = vertices.shape[1]
    if elements.ndim != 2 or elements.shape[1] != dim + 1 or len(elements) == 0:
        raise MeshError(f"Elements must be an (ne, {dim + 1}) array, got shape {elements.shape}")
    if elements.min() < 0 or elements.max() >= len(vertices):
        raise MeshTopologyError("Element vertex index out of range")
    if any(len(set(row)) != dim + 1 for row in elements.tolist()):
        raise MeshTopologyError("Element with repeated vertex index")

    ne = len(elements)
    corners = vertices[elements]  # (ne, d+1, d)

    volumes = simplex_measure(corners)
    diameters = np.zeros(ne)
    for a, b in itertools.combinations(range(dim + 1), 2):
        diameters = np.maximum(diameters, np.linalg.norm(corners[:, a] - corners[:, b], axis=1))
    degenerate = volumes <= DEGENERATE_RTOL * diameters**dim
    if degenerate.any():
        k = int(np.flatnonzero(degenerate)[0])
        raise DegenerateElementError(k, float(volumes[k]))

    # Local side i is opposite local vertex i
    opposite = [[j for j in range(dim + 1) if j != i] for i in range(dim + 1)]
    local = np.sort(elements[:, opposite], axis=2).reshape(-1, dim)
    sides, inverse = np.unique(local, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    element_sides = inverse.reshape(ne, dim + 1)
    ns = len(sides)

    counts = np.bincount(inverse, minlength=ns)
    if counts.max() > 2:
        bad = int(np.argmax(counts))
        raise MeshTopologyError(
            f"Side {tuple(sides[bad].tolist())} is shared by {counts[bad]} elements"
        )
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    side_elements = np.full((ns, 2), -1, dtype=np.int64)
    side_elements[:, 0] = order[starts] // (dim + 1)
    shared = counts == 2
    side_elements[shared, 1] = order[starts[shared] + 1] // (dim + 1)

    side_tags = np.where(shared, int(BoundaryTag.INTERIOR), int(BoundaryTag.IMPERVIOUS))
    _apply_listed_tags(sides, side_tags, listed_sides, listed_tags)

    inverse_t = np.linalg.inv(np.swapaxes(corners[:, 1:] - corners[:, :1], 1, 2))
    lambda_grads = np.empty((ne, dim + 1, dim))
    lambda_grads[:, 1:] = inverse_t
    lambda_grads[:, 0] = -inverse_t.sum(axis=1)

    side_points = vertices[sides]
    side_measures = simplex_measure(side_points)
    side_barycentres = side_points.mean(axis=1)

    _check_domain_measure(
        volumes, lambda_grads, element_sides, side_elements, side_barycentres, dim
    )

    mesh = PrimalMesh(
        dim=dim,
        vertices=_freeze(vertices),
        elements=_freeze(elements),
        sides=_freeze(sides),
        side_elements=_freeze(side_elements),
        element_sides=_freeze(element_sides),
        side_tags=_freeze(side_tags.astype(np.int64)),
        element_volumes=_freeze(volumes),
        element_barycentres=_freeze(corners.mean(axis=1)),
        element_diameters=_freeze(diameters),
        side_measures=_freeze(side_measures),
        side_barycentres=_freeze(side_barycentres),
        basis_gradients=_freeze(-dim * lambda_grads),
    )
    logger.debug(f"Built primal mesh: ne={ne}, ns={ns}, boundary={int((~shared).sum())}")
    return mesh


def _apply_listed_tags(
    sides: np.ndarray,
    side_tags: np.ndarray,
    listed_sides: np.ndarray | None,
    listed_tags: np.ndarray | None,
) -> None:
    if listed_sides is None or len(listed_sides) == 0:
        return
    listed_sides = np.sort(np.asarray(listed_sides, dtype=np.int64), axis=1)
    listed_tags = np.asarray(listed_tags, dtype=np.int64)
    index = {tuple(side): k for k, side in enumerate(sides.tolist())}
    seen: dict[int, int] = {}
    for side, tag in zip(listed_sides.tolist(), listed_tags.tolist(), strict=True):
        if tag not in (BoundaryTag.IMPERVIOUS, BoundaryTag.DIRICHLET):
            raise MeshParseError(f"Side {tuple(side)} has unknown tag {tag}")
        k = index.get(tuple(side))
        if k is None:
            raise MeshTopologyError(f"Listed side {tuple(side)} is not a side of any element")
        if side_tags[k] == BoundaryTag.INTERIOR:
            raise MeshTopologyError(f"Listed side {tuple(side)} is an interior side")
        if seen.get(k, tag) != tag:
            raise MeshTopologyError(f"Side {tuple(side)} carries conflicting tags")
        seen[k] = tag
        side_tags[k] = tag


def _check_domain_measure(
    volumes: np.ndarray,
    lambda_grads: np.ndarray,
    element_sides: np.ndarray,
    side_elements: np.ndarray,
    side_barycentres: np.ndarray,
    dim: int,
) -> None:
    """Compare sum |K| with the boundary flux of x/d; they differ on folded meshes."""
    boundary = side_elements[:, 1] < 0
    element = side_elements[boundary, 0]
    local = np.argmax(element_sides[element] == np.flatnonzero(boundary)[:, None], axis=1)
    # |sigma| n = -d |K| grad(lambda_i) for the side opposite vertex i
    scaled_normal = -dim * volumes[element, None] * lambda_grads[element, local]
    enclosed = float(np.einsum("ij,ij->", scaled_normal, side_barycentres[boundary])) / dim
    total = float(volumes.sum())
    if abs(enclosed - total) > DOMAIN_MEASURE_RTOL * total:
        raise MeshTopologyError(
            f"Elements overlap: sum of volumes {total:.12g} != enclosed measure {enclosed:.12g}"
        )


# --- Dual mesh ---


def build_dual(mesh: PrimalMesh) -> DualMesh:
    """Build the side-centred dual mesh of a primal mesh (pure function)."""
    d = mesh.dim
    ns = mesh.n_sides
    piece = mesh.element_volumes / (d + 1)

    volumes = np.bincount(
        mesh.element_sides.ravel(), weights=np.repeat(piece, d + 1), minlength=ns
    )
    total = mesh.measure
    if abs(volumes.sum() - total) > PARTITION_RTOL * total:
        raise MeshTopologyError("Dual volumes do not partition the domain")

    dual_index, points, weights = get_dual_pieces(mesh)
    barycentres = np.stack(
        [np.bincount(dual_index, weights=weights * points[:, k], minlength=ns) for k in range(d)],
        axis=1,
    ) / volumes[:, None]

    # Each unordered pair of sides of one element is a dual face
    local_pairs = list(itertools.combinations(range(d + 1), 2))
    rows = []
    for i, j in local_pairs:
        rest = [k for k in range(d + 1) if k not in (i, j)]
        a = mesh.element_sides[:, i]
        b = mesh.element_sides[:, j]
        face = np.concatenate(
            [mesh.element_barycentres[:, None, :], mesh.vertices[mesh.elements[:, rest]]], axis=1
        )
        rows.append((np.minimum(a, b), np.maximum(a, b), np.arange(mesh.n_elements), face))
    pair_d = np.concatenate([r[0] for r in rows])
    pair_e = np.concatenate([r[1] for r in rows])
    pair_element = np.concatenate([r[2] for r in rows])
    face_measure = simplex_measure(np.concatenate([r[3] for r in rows]))

    order = np.lexsort((pair_e, pair_d))
    pair_d, pair_e = pair_d[order], pair_e[order]
    pair_element, face_measure = pair_element[order], face_measure[order]
    centres = mesh.side_barycentres
    distance = np.linalg.norm(centres[pair_e] - centres[pair_d], axis=1)

    adjacency = sp.coo_matrix(
        (np.ones(2 * len(pair_d)), (np.r_[pair_d, pair_e], np.r_[pair_e, pair_d])), shape=(ns, ns)
    ).tocsr()
    adjacency.sort_indices()

    dual = DualMesh(
        volumes=_freeze(volumes),
        centres=_freeze(centres.copy()),
        barycentres=_freeze(barycentres),
        is_interior=_freeze(mesh.side_elements[:, 1] >= 0),
        neighbor_ptr=_freeze(adjacency.indptr.astype(np.int64)),
        neighbor_idx=_freeze(adjacency.indices.astype(np.int64)),
        pair_d=_freeze(pair_d),
        pair_e=_freeze(pair_e),
        pair_element=_freeze(pair_element),
        pair_distance=_freeze(distance),
        pair_face_measure=_freeze(face_measure),
    )
    logger.debug(f"Built dual mesh: {ns} volumes, {dual.n_pairs} pairs")
    return dual


def get_dual_pieces(mesh: PrimalMesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (dual index, barycentre, measure) of every piece K ∩ D.

    The barycentre rule on these pieces integrates linear functions exactly.
    """
    d = mesh.dim
    dual_index = mesh.element_sides.ravel()
    element = np.repeat(np.arange(mesh.n_elements), d + 1)
    points = (d * mesh.side_barycentres[dual_index] + mesh.element_barycentres[element]) / (d + 1)
    weights = mesh.element_volumes[element] / (d + 1)
    return dual_index, points, weights


# --- Regularity and refinement ---


def regularity(mesh: PrimalMesh) -> RegularityReport:
    """Shape-regularity constant kappa = min |K|/diam(K)^d and mesh size h."""
    ratios = mesh.element_volumes / mesh.element_diameters**mesh.dim
    worst = int(np.argmin(ratios))
    return RegularityReport(
        kappa=float(ratios[worst]),
        h=float(mesh.element_diameters.max()),
        worst_element=worst,
    )


def refine_uniform(mesh: PrimalMesh) -> PrimalMesh:
    """Red refinement: split every triangle into four through its edge midpoints.

    Child sides on the boundary inherit the tag of their parent side.
    """
    if mesh.dim != 2:
        raise MeshError("Uniform refinement is implemented for triangles only")
    nv = mesh.n_vertices
    vertices = np.vstack([mesh.vertices, mesh.side_barycentres])
    # midpoint of the side opposite local vertex i
    m = nv + mesh.element_sides
    a, b, c = mesh.elements.T
    ma, mb, mc = m.T
    children = np.stack(
        [
            np.stack([a, mc, mb], axis=1),
            np.stack([mc, b, ma], axis=1),
            np.stack([mb, ma, c], axis=1),
            np.stack([ma, mb, mc], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)

    boundary = mesh.boundary_sides
    mids = nv + boundary
    listed = np.concatenate(
        [
            np.stack([mesh.sides[boundary, 0], mids], axis=1),
            np.stack([mids, mesh.sides[boundary, 1]], axis=1),
        ]
    )
    tags = np.concatenate([mesh.side_tags[boundary], mesh.side_tags[boundary]])
    refined = build_primal(vertices, children, listed, tags)
    logger.debug(f"Refined mesh: {mesh.n_elements} -> {refined.n_elements} elements")
    return refined


def unit_square_mesh(n: int, dirichlet: Iterable[str] = ("left",)) -> PrimalMesh:
    """Structured right-triangle mesh of the unit square with n cells per edge.

    Boundary sides on the named edges (left, right, bottom, top) are tagged
    DIRICHLET, the rest IMPERVIOUS.
    """
    if n < 1:
        raise MeshError(f"Need at least one cell per edge, got {n}")
    dirichlet = set(dirichlet)
    unknown = dirichlet - set(_SQUARE_EDGES)
    if unknown:
        raise MeshError(f"Unknown square edges: {sorted(unknown)}")

    ticks = np.arange(n + 1) / n
    xx, yy = np.meshgrid(ticks, ticks)
    vertices = np.stack([xx.ravel(), yy.ravel()], axis=1)

    def vid(i: np.ndarray | int, j: np.ndarray | int) -> np.ndarray:
        return np.asarray(j) * (n + 1) + np.asarray(i)

    ii, jj = (g.ravel() for g in np.meshgrid(np.arange(n), np.arange(n)))
    v00, v10, v11, v01 = vid(ii, jj), vid(ii + 1, jj), vid(ii + 1, jj + 1), vid(ii, jj + 1)
    elements = np.concatenate(
        [np.stack([v00, v10, v11], axis=1), np.stack([v00, v11, v01], axis=1)]
    )

    k = np.arange(n)
    edges = {
        "bottom": np.stack([vid(k, 0), vid(k + 1, 0)], axis=1),
        "top": np.stack([vid(k, n), vid(k + 1, n)], axis=1),
        "left": np.stack([vid(0, k), vid(0, k + 1)], axis=1),
        "right": np.stack([vid(n, k), vid(n, k + 1)], axis=1),
    }
    listed = np.concatenate([edges[name] for name in _SQUARE_EDGES])
    tags = np.concatenate(
        [
            np.full(n, int(BoundaryTag.DIRICHLET if name in dirichlet else BoundaryTag.IMPERVIOUS))
            for name in _SQUARE_EDGES
        ]
    )
    return build_primal(vertices, elements, listed, tags)


# --- Seminorm diagnostics ---


def calculate_broken_seminorm(mesh: PrimalMesh, values: np.ndarray) -> float:
    """Broken H1 seminorm squared, sum_K |K| |grad u_h|^2 (pure function)."""
    grads = np.einsum("ki,kij->kj", values[mesh.element_sides], mesh.basis_gradients)
    return float(np.sum(mesh.element_volumes * np.einsum("kj,kj->k", grads, grads)))


def calculate_dual_seminorm(dual: DualMesh, values: np.ndarray) -> float:
    """Dual-face seminorm squared, sum over pairs |sigma_DE|/d_DE (u_E - u_D)^2."""
    jumps = values[dual.pair_e] - values[dual.pair_d]
    return float(np.sum(dual.pair_face_measure / dual.pair_distance * jumps**2))


def dual_seminorm_ratio(
    mesh: PrimalMesh, dual: DualMesh, samples: int = 100, seed: int = 0
) -> DualSeminormReport:
    """Sample the dual-to-broken seminorm ratio on random vectors.

    The ratio is bounded by (d+1) / (2 (d-1) kappa) on any admissible mesh.
    """
    if mesh.dim < 2:
        raise MeshError("Seminorm comparison needs d >= 2")
    kappa = regularity(mesh).kappa
    bound = (mesh.dim + 1) / (2 * (mesh.dim - 1) * kappa)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        u = rng.standard_normal(mesh.n_sides)
        broken = calculate_broken_seminorm(mesh, u)
        if broken > 0.0:
            worst = max(worst, calculate_dual_seminorm(dual, u) / broken)
    return DualSeminormReport(max_ratio=worst, bound=bound, samples=samples)
