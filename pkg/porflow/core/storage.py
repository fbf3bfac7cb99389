"""File-based storage layer: mesh text files, YAML, CSV (polars), legacy VTK."""

import os
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

import numpy as np
import polars as pl
import scipy.sparse as sp
import yaml

from porflow.core.errors import MeshParseError
from porflow.core.logger import log_io


def _ensure_dir(path: Path) -> None:
    """Ensure the parent directory exists."""
    path.parent.mkdir(parents=True, exist_ok=True)


def _atomic_write_text(path: Path, text: str) -> None:
    _ensure_dir(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)


def _float(value: float) -> str:
    """Shortest representation that re-reads to the same double."""
    return repr(float(value))


# --- Mesh text format ---


def read_mesh_text(
    path: str | Path,
) -> tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Parse a mesh text file.

    Layout: header ``dim nv ne ns``, then nv coordinate lines, ne element lines
    (0-based vertex indices) and ns side lines ``v0 .. v_{d-1} tag``. Blank lines
    and ``#`` comments are ignored.

    Returns:
        (dim, vertices, elements, listed sides, listed tags)
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        raise MeshParseError(f"Cannot read mesh file {path}: {e}") from e

    lines = [line.split("#", 1)[0].split() for line in raw.splitlines()]
    lines = [tokens for tokens in lines if tokens]
    if not lines:
        raise MeshParseError(f"{path}: empty mesh file")

    header = lines[0]
    if len(header) != 4:
        raise MeshParseError(f"{path}: header must be 'dim nv ne ns', got {' '.join(header)!r}")
    try:
        dim, nv, ne, ns = (int(token) for token in header)
    except ValueError as e:
        raise MeshParseError(f"{path}: non-integer header entry") from e
    if dim not in (2, 3):
        raise MeshParseError(f"{path}: dimension must be 2 or 3, got {dim}")
    if min(nv, ne, ns) < 0 or nv == 0 or ne == 0:
        raise MeshParseError(f"{path}: invalid counts nv={nv} ne={ne} ns={ns}")
    if len(lines) - 1 != nv + ne + ns:
        raise MeshParseError(
            f"{path}: expected {nv + ne + ns} data lines after the header, found {len(lines) - 1}"
        )

    body = lines[1:]
    vertices = _parse_block(path, body[:nv], dim, float, "vertex")
    elements = _parse_block(path, body[nv : nv + ne], dim + 1, int, "element")
    side_block = _parse_block(path, body[nv + ne :], dim + 1, int, "side")
    sides = side_block[:, :dim] if ns else np.zeros((0, dim), dtype=np.int64)
    tags = side_block[:, dim] if ns else np.zeros(0, dtype=np.int64)

    log_io("read_mesh", path=str(path), dim=dim, nv=nv, ne=ne, ns=ns)
    return dim, vertices, elements, sides, tags


def _parse_block(
    path: Path, rows: list[list[str]], width: int, kind: type, label: str
) -> np.ndarray:
    dtype = np.float64 if kind is float else np.int64
    if not rows:
        return np.zeros((0, width), dtype=dtype)
    out = np.empty((len(rows), width), dtype=dtype)
    for i, tokens in enumerate(rows):
        if len(tokens) != width:
            raise MeshParseError(f"{path}: {label} {i} has {len(tokens)} entries, expected {width}")
        try:
            out[i] = [kind(token) for token in tokens]
        except ValueError as e:
            raise MeshParseError(f"{path}: {label} {i} is not numeric: {' '.join(tokens)}") from e
    return out


def write_mesh_text(
    path: str | Path,
    vertices: np.ndarray,
    elements: np.ndarray,
    sides: np.ndarray,
    tags: np.ndarray,
) -> None:
    """Atomically write a mesh in the text format read by read_mesh_text."""
    path = Path(path)
    dim = vertices.shape[1]
    out = [f"{dim} {len(vertices)} {len(elements)} {len(sides)}"]
    out += [" ".join(_float(c) for c in vertex) for vertex in vertices]
    out += [" ".join(str(int(v)) for v in element) for element in elements]
    out += [
        " ".join(str(int(v)) for v in side) + f" {int(tag)}"
        for side, tag in zip(sides, tags, strict=True)
    ]
    _atomic_write_text(path, "\n".join(out) + "\n")
    log_io("write_mesh", path=str(path), ne=len(elements))


# --- YAML ---


def read_yaml(path: str | Path) -> dict[str, Any]:
    """Read a YAML mapping, returning {} for an empty file."""
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return data


def write_yaml(path: str | Path, data: Mapping[str, Any]) -> None:
    """Atomically write a mapping to YAML."""
    path = Path(path)
    text = yaml.dump(dict(data), default_flow_style=False, allow_unicode=True, sort_keys=False)
    _atomic_write_text(path, text)


# --- Fields ---


def _coordinate_names(dim: int) -> list[str]:
    return ["x", "y", "z"][:dim]


def write_field_csv(
    path: str | Path, points: np.ndarray, p_l: np.ndarray, p_g: np.ndarray, s_l: np.ndarray
) -> None:
    """Write per-dual-volume fields as ``D,x,y[,z],p_l,p_g,s_l``."""
    path = Path(path)
    columns: dict[str, Any] = {"D": np.arange(len(points), dtype=np.int64)}
    for axis, name in enumerate(_coordinate_names(points.shape[1])):
        columns[name] = np.asarray(points[:, axis], dtype=np.float64)
    for name, values in (("p_l", p_l), ("p_g", p_g), ("s_l", s_l)):
        columns[name] = np.asarray(values, dtype=np.float64)
    write_table_csv(path, pl.DataFrame(columns))


def read_field_csv(path: str | Path) -> pl.DataFrame:
    """Read a field CSV back; floats come back bit-exact."""
    return pl.read_csv(path, schema_overrides={"D": pl.Int64})


def write_vtk(
    path: str | Path, points: np.ndarray, fields: Mapping[str, np.ndarray], title: str = "porflow"
) -> None:
    """Write a legacy ASCII VTK unstructured grid of vertex cells with point scalars."""
    path = Path(path)
    n = len(points)
    padded = np.zeros((n, 3))
    padded[:, : points.shape[1]] = points

    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII"]
    out.append("DATASET UNSTRUCTURED_GRID")
    out.append(f"POINTS {n} double")
    out += [" ".join(f"{c:.17g}" for c in point) for point in padded]
    out.append(f"CELLS {n} {2 * n}")
    out += [f"1 {i}" for i in range(n)]
    out.append(f"CELL_TYPES {n}")
    out += ["1"] * n
    out.append(f"POINT_DATA {n}")
    for name, values in fields.items():
        out.append(f"SCALARS {name} double 1")
        out.append("LOOKUP_TABLE default")
        out += [f"{v:.17g}" for v in np.asarray(values, dtype=np.float64)]
    _atomic_write_text(path, "\n".join(out) + "\n")
    log_io("write_vtk", path=str(path), points=n)


# --- Reports ---


def write_table_csv(path: str | Path, table: pl.DataFrame | Iterable[Mapping[str, Any]]) -> None:
    """Atomically write a table (DataFrame or rows) as CSV."""
    path = Path(path)
    df = table if isinstance(table, pl.DataFrame) else pl.DataFrame(list(table))
    _ensure_dir(path)
    tmp = path.with_name(path.name + ".tmp")
    df.write_csv(tmp)
    os.replace(tmp, path)
    log_io("write_csv", path=str(path), rows=df.height)


def write_key_value(path: str | Path, values: Mapping[str, Any]) -> None:
    """Write ``key = value`` lines; floats in shortest round-trip form."""
    out = []
    for key, value in values.items():
        if isinstance(value, float | np.floating):
            value = _float(value)
        elif value is None:
            value = ""
        out.append(f"{key} = {value}")
    _atomic_write_text(Path(path), "\n".join(out) + "\n")


def read_key_value(path: str | Path) -> dict[str, str]:
    """Read a ``key = value`` report back as strings."""
    result = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            result[key.strip()] = value.strip()
    return result


def write_matrix_dump(path: str | Path, matrix: sp.spmatrix) -> None:
    """Dump stored entries as ``D E value`` lines in row-major order."""
    coo = sp.csr_matrix(matrix).tocoo()
    order = np.lexsort((coo.col, coo.row))
    out = [
        f"{int(coo.row[k])} {int(coo.col[k])} {coo.data[k]:.17g}" for k in order
    ]
    _atomic_write_text(Path(path), "\n".join(out) + ("\n" if out else ""))
    log_io("write_matrix", path=str(path), nnz=coo.nnz)
