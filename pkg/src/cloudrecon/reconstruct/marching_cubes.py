"""Marching cubes over a binary occupancy field.

The grid is padded with one empty layer on every side so that surfaces
touching the grid boundary still close. Sample points are voxel centres;
every output vertex sits at the midpoint of a cell edge, and vertices on a
shared edge are merged by a global edge key, which keeps the mesh indexed
and watertight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError, NothingToExtractError
from ._tables import TRIANGLE_TABLE
from .carving import OccupancyGrid

ISO_LEVEL = 0.5
MIN_TRIANGLE_AREA = 1e-12

# corner offsets (x, y, z): 0-3 walk the z=0 face, 4-7 sit above them
CORNERS = np.array(
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    dtype=np.intp,
)
EDGES = np.array(
    [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)],
    dtype=np.intp,
)
# per edge: the corner with the smaller coordinate and the axis it runs along
EDGE_BASE = np.minimum(CORNERS[EDGES[:, 0]], CORNERS[EDGES[:, 1]])
EDGE_AXIS = np.argmax(np.abs(CORNERS[EDGES[:, 1]] - CORNERS[EDGES[:, 0]]), axis=1)

_MAX_TRIS = max(len(row) for row in TRIANGLE_TABLE) // 3
TABLE = np.full((256, _MAX_TRIS * 3), -1, dtype=np.intp)
for _case, _row in enumerate(TRIANGLE_TABLE):
    TABLE[_case, : len(_row)] = _row
TRIANGLE_COUNT = np.array([len(row) // 3 for row in TRIANGLE_TABLE], dtype=np.intp)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    uvs: np.ndarray | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if n.shape != v.shape:
            raise InvalidInputError("need one normal per vertex")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise InvalidInputError("face index out of range")
        uv = None
        if self.uvs is not None:
            uv = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)
            if uv.shape[0] != v.shape[0]:
                raise InvalidInputError("need one UV per vertex")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "uvs", uv)

    def with_uvs(self, uvs: np.ndarray) -> TriangleMesh:
        return TriangleMesh(self.vertices, self.faces, self.normals, uvs)

    def face_normals(self) -> np.ndarray:
        """Unnormalized; length is twice the triangle area."""
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return np.cross(b - a, c - a)

    def signed_volume(self) -> float:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def edges(self) -> np.ndarray:
        """Undirected edges, one row per (triangle, side)."""
        e = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        return np.sort(e, axis=1)

    def euler_characteristic(self) -> int:
        unique_edges = np.unique(self.edges(), axis=0)
        used = np.unique(self.faces)
        return int(len(used) - len(unique_edges) + len(self.faces))

    def is_watertight(self) -> bool:
        _, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return bool(counts.size and np.all(counts == 2))


def _smoothed(field: np.ndarray) -> np.ndarray:
    out = field.astype(np.float64)
    for axis in range(3):
        padded = np.pad(out, [(1, 1) if a == axis else (0, 0) for a in range(3)], mode="edge")
        lo = np.take(padded, range(0, out.shape[axis]), axis=axis)
        mid = np.take(padded, range(1, out.shape[axis] + 1), axis=axis)
        hi = np.take(padded, range(2, out.shape[axis] + 2), axis=axis)
        out = 0.25 * lo + 0.5 * mid + 0.25 * hi
    return out


def extract_mesh(grid: OccupancyGrid) -> TriangleMesh:
    occ = grid.occupied
    if not occ.any() or occ.all():
        raise NothingToExtractError("grid has no boundary between occupied and empty voxels")
    field = np.pad(occ, 1).astype(np.uint8)
    dims = np.array(field.shape)

    # cube index per cell; bit k set when corner k is outside
    cells = tuple(int(d - 1) for d in dims)
    index = np.zeros(cells, dtype=np.intp)
    for bit, (dx, dy, dz) in enumerate(CORNERS):
        corner = field[dx : dx + cells[0], dy : dy + cells[1], dz : dz + cells[2]]
        index |= (corner < ISO_LEVEL).astype(np.intp) << bit

    active = np.flatnonzero(TRIANGLE_COUNT[index.ravel()] > 0)  # C order keeps output deterministic
    cases = index.ravel()[active]
    cell_xyz = np.stack(np.unravel_index(active, cells), axis=1)
    edge_ids = TABLE[cases]  # (n_active, 15), -1 padded
    valid = edge_ids >= 0
    cell_of = np.repeat(np.arange(len(active)), valid.sum(axis=1))
    edge_flat = edge_ids[valid]

    base = cell_xyz[cell_of] + EDGE_BASE[edge_flat]
    axis = EDGE_AXIS[edge_flat]
    keys = np.ravel_multi_index(tuple(base.T), tuple(dims)) * 3 + axis
    unique_keys, inverse = np.unique(keys, return_inverse=True)
    faces = inverse.reshape(-1, 3)

    corner_idx = np.stack(np.unravel_index(unique_keys // 3, tuple(dims)), axis=1).astype(np.float64)
    corner_idx[np.arange(len(unique_keys)), unique_keys % 3] += 0.5
    # padded index p is voxel p - 1, whose centre is lower + (p - 0.5) * size
    vertices = grid.lower + (corner_idx - 0.5) * grid.voxel_size

    mesh = TriangleMesh(vertices, faces, np.zeros_like(vertices))
    area2 = np.linalg.norm(mesh.face_normals(), axis=1)
    faces = faces[area2 > 2 * MIN_TRIANGLE_AREA]
    mesh = TriangleMesh(vertices, faces, np.zeros_like(vertices))
    if mesh.signed_volume() < 0:
        faces = faces[:, ::-1].copy()
        mesh = TriangleMesh(vertices, faces, np.zeros_like(vertices))
    return TriangleMesh(vertices, faces, _vertex_normals(mesh, field, unique_keys, dims, grid.voxel_size))


def _vertex_normals(mesh: TriangleMesh, field: np.ndarray, keys: np.ndarray, dims: np.ndarray, size: np.ndarray) -> np.ndarray:
    """Negated occupancy gradient at each edge midpoint; area-weighted face normals where it vanishes."""
    grads = np.gradient(_smoothed(field), *size)
    lo = np.stack(np.unravel_index(keys // 3, tuple(dims)), axis=1)
    hi = lo.copy()
    hi[np.arange(len(keys)), keys % 3] += 1
    g = np.stack([0.5 * (gr[tuple(lo.T)] + gr[tuple(hi.T)]) for gr in grads], axis=1)
    normals = -g
    fn = mesh.face_normals()
    fallback = np.zeros_like(mesh.vertices)
    for i in range(3):
        np.add.at(fallback, mesh.faces[:, i], fn)
    length = np.linalg.norm(normals, axis=1)
    weak = length < 1e-9 * max(1.0, float(length.max(initial=0.0)))
    normals[weak] = fallback[weak]
    length = np.linalg.norm(normals, axis=1)
    length[length == 0] = 1.0
    return normals / length[:, None]
