"""Silhouette carving of a voxel grid (visual hull)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InvalidInputError, ValidationError
from ..posecore import CameraIntrinsics, RigidTransform

DEFAULT_HALF_EXTENT = 0.5


def project(point, pose: RigidTransform, k: CameraIntrinsics) -> tuple[float, float, float] | None:
    """Pixel ``(u, v)`` and depth of a world point, or ``None`` when it is not in front of the camera."""
    c = pose.rotation.T @ (np.asarray(point, dtype=np.float64) - pose.translation)
    if c[2] >= 0.0:
        return None
    depth = -c[2]
    return k.w / 2.0 + k.f * c[0] / depth, k.h / 2.0 - k.f * c[1] / depth, float(depth)


def project_points(points: np.ndarray, pose: RigidTransform, k: CameraIntrinsics) -> tuple[np.ndarray, ...]:
    """Vectorized :func:`project`: returns ``(u, v, depth, in_front)``; entries behind the camera are NaN."""
    c = (np.asarray(points, dtype=np.float64) - pose.translation) @ pose.rotation
    in_front = c[:, 2] < 0.0
    depth = np.where(in_front, -c[:, 2], np.nan)
    u = k.w / 2.0 + k.f * c[:, 0] / depth
    v = k.h / 2.0 - k.f * c[:, 1] / depth
    return u, v, depth, in_front


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Boolean voxels over an axis-aligned box; ``occupied[i, j, k]`` is the voxel at x-index i, y-index j, z-index k."""

    occupied: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        occ = np.asarray(self.occupied, dtype=bool)
        lower = np.asarray(self.lower, dtype=np.float64).reshape(3)
        upper = np.asarray(self.upper, dtype=np.float64).reshape(3)
        if occ.ndim != 3 or min(occ.shape) < 2:
            raise InvalidInputError(f"grid needs resolution >= 2 per axis, got {occ.shape}")
        if not np.all(lower < upper):
            raise InvalidInputError(f"grid bounds must satisfy min < max, got {lower} / {upper}")
        object.__setattr__(self, "occupied", occ)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def full(cls, resolution: int | Sequence[int], lower=(-DEFAULT_HALF_EXTENT,) * 3, upper=(DEFAULT_HALF_EXTENT,) * 3) -> OccupancyGrid:
        shape = (resolution,) * 3 if np.isscalar(resolution) else tuple(resolution)
        return cls(np.ones(shape, dtype=bool), lower, upper)

    @classmethod
    def cube(cls, resolution: int, half_extent: float = DEFAULT_HALF_EXTENT) -> OccupancyGrid:
        return cls.full(resolution, (-half_extent,) * 3, (half_extent,) * 3)

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.occupied.shape

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.upper - self.lower) / np.array(self.resolution)

    def axis_centers(self) -> list[np.ndarray]:
        return [self.lower[a] + (np.arange(n) + 0.5) * self.voxel_size[a] for a, n in enumerate(self.resolution)]

    def centers(self) -> np.ndarray:
        """Voxel centres in C order, shape ``(nx*ny*nz, 3)``."""
        xs, ys, zs = np.meshgrid(*self.axis_centers(), indexing="ij")
        return np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)

    def with_occupancy(self, occupied: np.ndarray) -> OccupancyGrid:
        return OccupancyGrid(occupied.reshape(self.resolution), self.lower, self.upper)

    @property
    def count(self) -> int:
        return int(self.occupied.sum())


@dataclass(frozen=True, eq=False)
class View:
    pose: RigidTransform
    intrinsics: CameraIntrinsics
    mask: np.ndarray


def carve_view(points: np.ndarray, keep: np.ndarray, view: View) -> None:
    """Clear ``keep`` where the point lands on background in ``view``."""
    mask = np.asarray(view.mask)
    h, w = mask.shape[:2]
    u, v, _, in_front = project_points(points, view.pose, view.intrinsics)
    with np.errstate(invalid="ignore"):
        inside = in_front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    idx = np.flatnonzero(inside)
    # pixel i covers [i, i+1) with its centre at i + 0.5
    foreground = mask[v[idx].astype(np.intp), u[idx].astype(np.intp)] > 0
    keep[idx[~foreground]] = False


def carve(grid: OccupancyGrid, views: Sequence[View], chunk: int = 1 << 18) -> OccupancyGrid:
    """Visual hull: a voxel survives unless some view sees its centre on background."""
    if len(views) == 0:
        raise ValidationError("carving needs at least one view")
    occupied = grid.occupied.ravel().copy()
    centers = grid.centers()
    for start in range(0, occupied.size, chunk):
        sl = slice(start, start + chunk)
        live = np.flatnonzero(occupied[sl])
        if live.size == 0:
            continue
        keep = np.ones(live.size, dtype=bool)
        pts = centers[sl][live]
        for view in views:
            carve_view(pts, keep, view)
        occupied[start + live[~keep]] = False
    return grid.with_occupancy(occupied)


def voxel_iou(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0
