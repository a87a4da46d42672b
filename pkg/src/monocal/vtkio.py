"""Reading and writing meshes and node fields in legacy ASCII VTK.

Volume meshes are written as UNSTRUCTURED_GRID files with hexahedron
cells (type 12). Boundary tags travel in a companion surface file holding
the boundary quads (type 9) with the tag as integer cell data, sharing the
volume file's point numbering. Node fields are written as POINT_DATA
scalars or vectors on the volume grid.

Coordinates and field values are emitted with 9 significant digits, which
is the round-trip precision contract for these files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import MeshFormatError
from .geometry import Mesh

_HEADER = "# vtk DataFile Version 3.0"
_FMT = "%.9g"


def surface_path(path) -> Path:
    """Companion surface-file path for a volume mesh path."""
    p = Path(path)
    return p.with_name(p.stem + "_surface" + p.suffix)


def _fmt_row(values) -> str:
    return " ".join(_FMT % v for v in values)


def _write_points(lines: list[str], pts: np.ndarray) -> None:
    lines.append(f"POINTS {len(pts)} double")
    lines.extend(_fmt_row(row) for row in pts)


def _write_cells(lines: list[str], conn: np.ndarray, cell_type: int) -> None:
    n, k = conn.shape
    lines.append(f"CELLS {n} {n * (k + 1)}")
    lines.extend(f"{k} " + " ".join(str(i) for i in row) for row in conn)
    lines.append(f"CELL_TYPES {n}")
    lines.extend([str(cell_type)] * n)


def write_mesh(path, mesh: Mesh) -> None:
    """Write a mesh and its tagged boundary surface.

    Produces two files: the volume grid at `path` and the boundary quads
    with their surface tags at the companion `_surface` path.
    """
    path = Path(path)
    lines = [_HEADER, f"monocal mesh h={_FMT % mesh.characteristic_size}",
             "ASCII", "DATASET UNSTRUCTURED_GRID"]
    _write_points(lines, mesh.nodes)
    _write_cells(lines, mesh.elems, 12)
    path.write_text("\n".join(lines) + "\n")

    slines = [_HEADER, "monocal boundary surface", "ASCII",
              "DATASET UNSTRUCTURED_GRID"]
    _write_points(slines, mesh.nodes)
    _write_cells(slines, mesh.boundary_faces, 9)
    slines.append(f"CELL_DATA {len(mesh.boundary_faces)}")
    slines.append("SCALARS surface_tag int 1")
    slines.append("LOOKUP_TABLE default")
    slines.extend(str(int(t)) for t in mesh.boundary_tags)
    surface_path(path).write_text("\n".join(slines) + "\n")


def write_fields(path, mesh: Mesh, fields: dict[str, np.ndarray]) -> None:
    """Write node fields as POINT_DATA on a copy of the volume grid.

    Scalars must have shape (n_nodes,), vectors (n_nodes, 3). Not-a-number
    entries are preserved as `nan` tokens.
    """
    path = Path(path)
    lines = [_HEADER, f"monocal fields h={_FMT % mesh.characteristic_size}",
             "ASCII", "DATASET UNSTRUCTURED_GRID"]
    _write_points(lines, mesh.nodes)
    _write_cells(lines, mesh.elems, 12)
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    for name, values in fields.items():
        arr = np.asarray(values, dtype=float)
        if arr.shape == (mesh.n_nodes,):
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_FMT % v for v in arr)
        elif arr.shape == (mesh.n_nodes, 3):
            lines.append(f"VECTORS {name} double")
            lines.extend(_fmt_row(row) for row in arr)
        else:
            raise MeshFormatError(
                f"field '{name}' has shape {arr.shape}, expected "
                f"({mesh.n_nodes},) or ({mesh.n_nodes}, 3)")
    path.write_text("\n".join(lines) + "\n")


class _Scanner:
    """Line scanner that remembers positions for error reporting."""

    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next_line(self, what: str) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise MeshFormatError(f"unexpected end of file while reading {what}",
                              line=len(self.lines))

    @property
    def line_no(self) -> int:
        return self.pos

    def read_numbers(self, count: int, what: str, dtype=float) -> np.ndarray:
        """Read exactly `count` whitespace-separated numbers."""
        out = np.empty(count, dtype=dtype)
        got = 0
        while got < count:
            line = self.next_line(what)
            parts = line.split()
            for tok in parts:
                if got >= count:
                    raise MeshFormatError(
                        f"extra values while reading {what}", line=self.line_no)
                try:
                    out[got] = dtype(tok)
                except ValueError as exc:
                    raise MeshFormatError(
                        f"bad value {tok!r} while reading {what}",
                        line=self.line_no) from exc
                got += 1
        return out


def _read_grid(scanner: _Scanner, expect_cell_type: int, corners: int,
               path: str) -> tuple[np.ndarray, np.ndarray, str]:
    header = scanner.next_line("header")
    if not header.startswith("# vtk DataFile"):
        raise MeshFormatError(f"{path}: not a legacy VTK file", line=scanner.line_no)
    title = scanner.next_line("title")
    fmt = scanner.next_line("format")
    if fmt != "ASCII":
        raise MeshFormatError(f"unsupported format {fmt!r}", line=scanner.line_no)
    dataset = scanner.next_line("dataset")
    if dataset.split() != ["DATASET", "UNSTRUCTURED_GRID"]:
        raise MeshFormatError(f"expected DATASET UNSTRUCTURED_GRID, got {dataset!r}",
                              line=scanner.line_no)

    head = scanner.next_line("POINTS header").split()
    if len(head) != 3 or head[0] != "POINTS":
        raise MeshFormatError(f"expected POINTS header, got {head!r}",
                              line=scanner.line_no)
    n_points = int(head[1])
    points = scanner.read_numbers(3 * n_points, "point coordinates").reshape(-1, 3)

    head = scanner.next_line("CELLS header").split()
    if len(head) != 3 or head[0] != "CELLS":
        raise MeshFormatError(f"expected CELLS header, got {head!r}",
                              line=scanner.line_no)
    n_cells, total = int(head[1]), int(head[2])
    raw = scanner.read_numbers(total, "cell connectivity", dtype=int)
    conn = np.empty((n_cells, corners), dtype=np.int64)
    k = 0
    for c in range(n_cells):
        if raw[k] != corners:
            raise MeshFormatError(
                f"cell {c} lists {raw[k]} corner nodes, expected {corners}",
                line=scanner.line_no)
        conn[c] = raw[k + 1:k + 1 + corners]
        k += corners + 1

    head = scanner.next_line("CELL_TYPES header").split()
    if len(head) != 2 or head[0] != "CELL_TYPES":
        raise MeshFormatError(f"expected CELL_TYPES header, got {head!r}",
                              line=scanner.line_no)
    types = scanner.read_numbers(int(head[1]), "cell types", dtype=int)
    bad = np.nonzero(types != expect_cell_type)[0]
    if bad.size:
        raise MeshFormatError(
            f"cell {int(bad[0])} has type {int(types[bad[0]])}, expected "
            f"{expect_cell_type}", line=scanner.line_no)
    return points, conn, title


def read_mesh(path) -> Mesh:
    """Read a volume mesh and its companion boundary-surface file."""
    path = Path(path)
    scanner = _Scanner(path.read_text())
    points, elems, title = _read_grid(scanner, 12, 8, str(path))

    h = 0.0
    for token in title.split():
        if token.startswith("h="):
            h = float(token[2:])
    spath = surface_path(path)
    if not spath.exists():
        raise MeshFormatError(f"missing boundary surface file {spath}")
    sscan = _Scanner(spath.read_text())
    spts, faces, _ = _read_grid(sscan, 9, 4, str(spath))
    if len(spts) != len(points):
        raise MeshFormatError(
            f"{spath}: surface file has {len(spts)} points, volume has {len(points)}")

    head = sscan.next_line("CELL_DATA header").split()
    if len(head) != 2 or head[0] != "CELL_DATA" or int(head[1]) != len(faces):
        raise MeshFormatError("expected CELL_DATA matching face count",
                              line=sscan.line_no)
    name_row = sscan.next_line("SCALARS header").split()
    if name_row[0] != "SCALARS" or name_row[1] != "surface_tag":
        raise MeshFormatError("expected SCALARS surface_tag", line=sscan.line_no)
    lut = sscan.next_line("LOOKUP_TABLE")
    if not lut.startswith("LOOKUP_TABLE"):
        raise MeshFormatError("expected LOOKUP_TABLE", line=sscan.line_no)
    tags = sscan.read_numbers(len(faces), "surface tags", dtype=int).astype(np.int16)

    mesh = Mesh(points, elems, faces, tags, h)
    mesh.validate()
    return mesh


def read_fields(path) -> dict[str, np.ndarray]:
    """Read POINT_DATA fields from a fields file written by write_fields."""
    path = Path(path)
    scanner = _Scanner(path.read_text())
    points, _, _ = _read_grid(scanner, 12, 8, str(path))
    n = len(points)

    head = scanner.next_line("POINT_DATA header").split()
    if len(head) != 2 or head[0] != "POINT_DATA" or int(head[1]) != n:
        raise MeshFormatError("expected POINT_DATA matching point count",
                              line=scanner.line_no)
    fields: dict[str, np.ndarray] = {}
    while scanner.pos < len(scanner.lines):
        line = scanner.lines[scanner.pos].strip()
        scanner.pos += 1
        if not line:
            continue
        head = line.split()
        if head[0] == "SCALARS":
            lut = scanner.next_line("LOOKUP_TABLE")
            if not lut.startswith("LOOKUP_TABLE"):
                raise MeshFormatError("expected LOOKUP_TABLE", line=scanner.line_no)
            fields[head[1]] = scanner.read_numbers(n, f"field {head[1]}")
        elif head[0] == "VECTORS":
            fields[head[1]] = scanner.read_numbers(3 * n, f"field {head[1]}").reshape(-1, 3)
        else:
            raise MeshFormatError(f"unexpected section {head[0]!r}",
                                  line=scanner.line_no)
    return fields
