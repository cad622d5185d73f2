"""Polygonal meshes on the square [-1,1]^2 and their geometric quantities.

A mesh stores vertices, counterclockwise cell->vertex cycles and the derived
face (edge) connectivity.  Geometry (areas, centroids, face normals, and the
cell-to-face orthogonality distances used by the stabilized gradient) is
computed separately so meshes can be validated before any discretisation is
built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCell, ParseError, TopologyError


@dataclass(frozen=True)
class Mesh:
    """Conforming polygonal mesh.

    vertices:    (n_vertices, dim) coordinates.
    cells:       list of vertex-index cycles, counterclockwise.
    faces:       (n_faces, 2) vertex pairs (canonical order).
    face_cells:  (n_faces, 2) adjacent cell indices; second entry is -1 on
                 boundary faces.
    cell_faces:  per cell, the face indices in cell-cycle order.
    """

    vertices: np.ndarray
    cells: list[list[int]]
    faces: np.ndarray
    face_cells: np.ndarray
    cell_faces: list[list[int]]
    dim: int = 2

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.nonzero(self.face_cells[:, 1] < 0)[0]


@dataclass(frozen=True)
class MeshGeometry:
    """Geometric quantities of a mesh.

    Per cell: volume (area in 2D), centroid, diameter.
    Per face: measure (length), midpoint, unit normal oriented outward from
    the first adjacent cell.
    Per (cell, face) incidence ("sub-cell"): outward unit normal and the
    orthogonality distance d = (x_face - x_cell) . n, both flattened over
    the incidence list (sub_cells[i], sub_faces[i]).
    """

    cell_volumes: np.ndarray
    cell_centroids: np.ndarray
    cell_diameters: np.ndarray
    face_measures: np.ndarray
    face_midpoints: np.ndarray
    face_normals: np.ndarray
    sub_cells: np.ndarray
    sub_faces: np.ndarray
    sub_normals: np.ndarray
    d_ortho: np.ndarray
    h: float = field(default=0.0)


def _polygon_area_centroid(pts: np.ndarray) -> tuple[float, np.ndarray]:
    """Signed area and centroid of a simple polygon (shoelace formula)."""
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if abs(area) < 1e-300:
        return area, pts.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, np.array([cx, cy])


def _build_faces(
    n_vertices: int, cells: list[list[int]]
) -> tuple[np.ndarray, np.ndarray, list[list[int]]]:
    """Derive faces by deduplicating cell edges; validate adjacency counts."""
    face_index: dict[tuple[int, int], int] = {}
    faces: list[tuple[int, int]] = []
    face_cells: list[list[int]] = []
    cell_faces: list[list[int]] = []
    for k, cell in enumerate(cells):
        if len(cell) < 3:
            raise TopologyError(f"cell {k} has fewer than 3 vertices")
        if len(set(cell)) != len(cell):
            raise TopologyError(f"cell {k} repeats a vertex")
        for v in cell:
            if not 0 <= v < n_vertices:
                raise ParseError(f"cell {k}: vertex index {v} out of range")
        local = []
        for a, b in zip(cell, cell[1:] + cell[:1]):
            key = (a, b) if a < b else (b, a)
            idx = face_index.get(key)
            if idx is None:
                idx = len(faces)
                face_index[key] = idx
                faces.append(key)
                face_cells.append([k, -1])
            else:
                if face_cells[idx][1] >= 0:
                    raise TopologyError(
                        f"face {key} adjacent to more than two cells"
                    )
                face_cells[idx][1] = k
            local.append(idx)
        cell_faces.append(local)
    return (
        np.asarray(faces, dtype=np.int64),
        np.asarray(face_cells, dtype=np.int64),
        cell_faces,
    )


def make_mesh(vertices: np.ndarray, cells: list[list[int]]) -> Mesh:
    """Assemble and validate a mesh from vertices and ccw cell cycles."""
    vertices = np.asarray(vertices, dtype=float)
    faces, face_cells, cell_faces = _build_faces(len(vertices), cells)
    for k, cell in enumerate(cells):
        area, _ = _polygon_area_centroid(vertices[cell])
        if area <= 0.0:
            raise DegenerateCell(
                f"cell {k} has non-positive signed area {area:.3e} "
                "(vertices must be counterclockwise)"
            )
    return Mesh(
        vertices=vertices,
        cells=[list(c) for c in cells],
        faces=faces,
        face_cells=face_cells,
        cell_faces=cell_faces,
    )


def build_triangular(n: int) -> Mesh:
    """Uniform triangular mesh: n x n squares on [-1,1]^2, each split in two."""
    if n < 1:
        raise ValueError("n must be >= 1")
    coords = np.linspace(-1.0, 1.0, n + 1)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i: int, j: int) -> int:
        return i * (n + 1) + j

    cells: list[list[int]] = []
    for i in range(n):
        for j in range(n):
            v00 = vid(i, j)
            v10 = vid(i + 1, j)
            v11 = vid(i + 1, j + 1)
            v01 = vid(i, j + 1)
            cells.append([v00, v10, v11])
            cells.append([v00, v11, v01])
    return make_mesh(vertices, cells)


def build_distorted(n: int, amplitude: float = 0.3) -> Mesh:
    """Quadrilateral grid with interior vertices displaced by a fixed smooth
    perturbation: shift = amplitude*(2/n)*(sin(pi x)sin(pi y), sin(pi x)sin(pi y)).

    Boundary vertices are left in place.  amplitude < 0.45 keeps all cells
    valid; violations raise DegenerateCell.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= amplitude < 0.45:
        raise ValueError("amplitude must lie in [0, 0.45)")
    coords = np.linspace(-1.0, 1.0, n + 1)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    shift = amplitude * (2.0 / n) * np.sin(np.pi * xx) * np.sin(np.pi * yy)
    interior = np.zeros_like(xx, dtype=bool)
    interior[1:-1, 1:-1] = True
    xx = xx + np.where(interior, shift, 0.0)
    yy = yy + np.where(interior, shift, 0.0)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i: int, j: int) -> int:
        return i * (n + 1) + j

    cells: list[list[int]] = []
    for i in range(n):
        for j in range(n):
            cells.append([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])
    mesh = make_mesh(vertices, cells)
    compute_geometry(mesh)  # rejects cells with d_ortho <= 0
    return mesh


def load_mesh(path) -> Mesh:
    """Read a mesh from the line-oriented text format.

    Format::

        polymesh 2
        vertices N
        x y            (N lines)
        cells M
        k i1 ... ik    (M lines, 0-based ccw vertex indices)

    '#' starts a comment anywhere.
    """
    with open(path) as fh:
        raw = fh.readlines()
    lines: list[tuple[int, str]] = []
    for no, line in enumerate(raw, start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            lines.append((no, stripped))
    pos = 0

    def take(what: str) -> tuple[int, str]:
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"unexpected end of file while reading {what}")
        item = lines[pos]
        pos += 1
        return item

    no, header = take("header")
    parts = header.split()
    if len(parts) != 2 or parts[0] != "polymesh":
        raise ParseError(f"line {no}: expected 'polymesh <dim>', got '{header}'")
    if parts[1] != "2":
        raise ParseError(f"line {no}: only dimension 2 is supported")

    no, vhead = take("vertex count")
    parts = vhead.split()
    if len(parts) != 2 or parts[0] != "vertices":
        raise ParseError(f"line {no}: expected 'vertices N', got '{vhead}'")
    try:
        n_vertices = int(parts[1])
    except ValueError as exc:
        raise ParseError(f"line {no}: bad vertex count '{parts[1]}'") from exc

    vertices = np.empty((n_vertices, 2))
    for i in range(n_vertices):
        no, line = take("vertex")
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"line {no}: expected 'x y', got '{line}'")
        try:
            vertices[i] = [float(parts[0]), float(parts[1])]
        except ValueError as exc:
            raise ParseError(f"line {no}: bad coordinate in '{line}'") from exc

    no, chead = take("cell count")
    parts = chead.split()
    if len(parts) != 2 or parts[0] != "cells":
        raise ParseError(f"line {no}: expected 'cells M', got '{chead}'")
    try:
        n_cells = int(parts[1])
    except ValueError as exc:
        raise ParseError(f"line {no}: bad cell count '{parts[1]}'") from exc

    cells: list[list[int]] = []
    for _ in range(n_cells):
        no, line = take("cell")
        parts = line.split()
        try:
            count = int(parts[0])
            idx = [int(p) for p in parts[1:]]
        except (ValueError, IndexError) as exc:
            raise ParseError(f"line {no}: bad cell line '{line}'") from exc
        if len(idx) != count:
            raise ParseError(
                f"line {no}: cell declares {count} vertices but lists {len(idx)}"
            )
        for v in idx:
            if not 0 <= v < n_vertices:
                raise ParseError(f"line {no}: vertex index {v} out of range")
        cells.append(idx)
    if pos != len(lines):
        no, line = lines[pos]
        raise ParseError(f"line {no}: trailing content '{line}'")
    return make_mesh(vertices, cells)


def compute_geometry(mesh: Mesh) -> MeshGeometry:
    """All geometric quantities; raises DegenerateCell on |K|<=0 or d<=0."""
    nc, nf = mesh.n_cells, mesh.n_faces
    cell_volumes = np.empty(nc)
    cell_centroids = np.empty((nc, 2))
    cell_diameters = np.empty(nc)
    for k, cell in enumerate(mesh.cells):
        pts = mesh.vertices[cell]
        area, centroid = _polygon_area_centroid(pts)
        if area <= 0.0:
            raise DegenerateCell(f"cell {k} has non-positive area {area:.3e}")
        cell_volumes[k] = area
        cell_centroids[k] = centroid
        diff = pts[:, None, :] - pts[None, :, :]
        cell_diameters[k] = np.sqrt((diff**2).sum(axis=2)).max()

    edge = mesh.vertices[mesh.faces[:, 1]] - mesh.vertices[mesh.faces[:, 0]]
    face_measures = np.hypot(edge[:, 0], edge[:, 1])
    if np.any(face_measures <= 0.0):
        raise DegenerateCell("zero-length face")
    face_midpoints = 0.5 * (
        mesh.vertices[mesh.faces[:, 0]] + mesh.vertices[mesh.faces[:, 1]]
    )

    # Outward normals are computed per (cell, face) from the ccw cell cycle;
    # the face-level normal is the one outward from the first adjacent cell.
    face_normals = np.zeros((nf, 2))
    sub_cells: list[int] = []
    sub_faces: list[int] = []
    sub_normals: list[np.ndarray] = []
    d_ortho: list[float] = []
    for k, (cell, local_faces) in enumerate(zip(mesh.cells, mesh.cell_faces)):
        for (a, b), f in zip(
            zip(cell, cell[1:] + cell[:1]), local_faces
        ):
            t = mesh.vertices[b] - mesh.vertices[a]
            length = np.hypot(t[0], t[1])
            n_out = np.array([t[1], -t[0]]) / length  # ccw cycle: right-hand outward
            d = float((face_midpoints[f] - cell_centroids[k]) @ n_out)
            if d <= 0.0:
                raise DegenerateCell(
                    f"cell {k}, face {f}: orthogonality distance {d:.3e} <= 0"
                )
            if mesh.face_cells[f, 0] == k:
                face_normals[f] = n_out
            sub_cells.append(k)
            sub_faces.append(f)
            sub_normals.append(n_out)
            d_ortho.append(d)

    return MeshGeometry(
        cell_volumes=cell_volumes,
        cell_centroids=cell_centroids,
        cell_diameters=cell_diameters,
        face_measures=face_measures,
        face_midpoints=face_midpoints,
        face_normals=face_normals,
        sub_cells=np.asarray(sub_cells, dtype=np.int64),
        sub_faces=np.asarray(sub_faces, dtype=np.int64),
        sub_normals=np.asarray(sub_normals),
        d_ortho=np.asarray(d_ortho),
        h=float(cell_diameters.max()),
    )
