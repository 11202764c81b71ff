"""Reconstruction stage: visual hull carving, marching cubes and artifact export.

This backend stands in for a neural reconstructor with the same contract:
silhouettes plus a poses_bounds table in, the five mesh/material files out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..codec import DatasetArchive
from ..errors import ValidationError
from ..posecore import RigidTransform, parse_pose_row, undo_rotational_fix
from .carving import DEFAULT_HALF_EXTENT, OccupancyGrid, View, carve, project, project_points, voxel_iou
from .export import (
    ARTIFACT_NAMES,
    ArtifactManifest,
    Textures,
    artifact_bytes,
    assign_uvs_and_materials,
    export_artifacts,
)
from .marching_cubes import TriangleMesh, extract_mesh

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 96

__all__ = [
    "ARTIFACT_NAMES",
    "ArtifactManifest",
    "OccupancyGrid",
    "ReconstructConfig",
    "Reconstruction",
    "Textures",
    "TriangleMesh",
    "View",
    "artifact_bytes",
    "assign_uvs_and_materials",
    "carve",
    "export_artifacts",
    "extract_mesh",
    "project",
    "project_points",
    "reconstruct_archive",
    "views_from_archive",
    "voxel_iou",
]


@dataclass
class ReconstructConfig:
    resolution: int = DEFAULT_RESOLUTION
    half_extent: float = DEFAULT_HALF_EXTENT


@dataclass(frozen=True, eq=False)
class Reconstruction:
    grid: OccupancyGrid
    mesh: TriangleMesh
    textures: Textures

    def artifacts(self) -> dict[str, bytes]:
        return artifact_bytes(self.mesh, self.textures)


def views_from_archive(archive: DatasetArchive) -> list[View]:
    """Camera-to-world poses recovered from the table rows, paired with masks."""
    if archive.masks is None:
        raise ValidationError("reconstruction needs masks; run the preprocess stage first", ["masks/"])
    views = []
    for row, mask in zip(archive.poses_bounds.rows, archive.masks):
        view, k, _ = parse_pose_row(row)
        pose = RigidTransform(undo_rotational_fix(view[:, :3]), view[:, 3])
        views.append(View(pose, k, np.asarray(mask)))
    return views


def reconstruct_archive(archive: DatasetArchive, config: ReconstructConfig | None = None) -> Reconstruction:
    config = config or ReconstructConfig()
    grid = OccupancyGrid.cube(config.resolution, config.half_extent)
    carved = carve(grid, views_from_archive(archive))
    log.info("carved %d of %d voxels", carved.count, carved.occupied.size)
    mesh, textures = assign_uvs_and_materials(extract_mesh(carved))
    return Reconstruction(carved, mesh, textures)
