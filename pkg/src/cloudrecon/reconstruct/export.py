"""Placeholder UVs and materials, and the five-file mesh artifact set."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..codec import encode_png
from ..errors import InvalidInputError
from .marching_cubes import TriangleMesh

OBJ_NAME = "mesh.obj"
MTL_NAME = "mesh.mtl"
KD_NAME = "texture_kd.png"
KS_NAME = "texture_ks.png"
NORMAL_NAME = "texture_n.png"
ARTIFACT_NAMES = (OBJ_NAME, MTL_NAME, KD_NAME, KS_NAME, NORMAL_NAME)

TEXTURE_SIZE = 256
KD_GRAY = 128
ROUGHNESS = 0.8
METALNESS = 0.0
FLAT_NORMAL = (128, 128, 255)
MATERIAL_NAME = "default"


@dataclass(frozen=True, eq=False)
class Textures:
    kd: np.ndarray
    ks: np.ndarray
    normal: np.ndarray


def spherical_uvs(vertices: np.ndarray) -> np.ndarray:
    d = vertices - vertices.mean(axis=0)
    r = np.linalg.norm(d, axis=1)
    r[r == 0] = 1.0
    u = 0.5 + np.arctan2(d[:, 2], d[:, 0]) / (2 * np.pi)
    v = 0.5 + np.arcsin(np.clip(d[:, 1] / r, -1.0, 1.0)) / np.pi
    return np.clip(np.stack([u, v], axis=1), 0.0, 1.0)


def placeholder_textures(size: int = TEXTURE_SIZE) -> Textures:
    # ORM packing: red is occlusion (unused, 0), green roughness, blue metalness
    orm = (0, int(round(ROUGHNESS * 255)), int(round(METALNESS * 255)))
    return Textures(
        kd=np.full((size, size, 3), KD_GRAY, dtype=np.uint8),
        ks=np.tile(np.array(orm, dtype=np.uint8), (size, size, 1)),
        normal=np.tile(np.array(FLAT_NORMAL, dtype=np.uint8), (size, size, 1)),
    )


def assign_uvs_and_materials(mesh: TriangleMesh) -> tuple[TriangleMesh, Textures]:
    if len(mesh.faces) == 0:
        raise InvalidInputError("mesh has no faces")
    return mesh.with_uvs(spherical_uvs(mesh.vertices)), placeholder_textures()


def _fmt(values: np.ndarray) -> list[str]:
    return [" ".join(f"{x:.9g}" for x in row) for row in values]


def format_obj(mesh: TriangleMesh) -> bytes:
    if mesh.uvs is None:
        raise InvalidInputError("mesh has no UVs; call assign_uvs_and_materials first")
    lines = [f"mtllib {MTL_NAME}", "o mesh"]
    lines += [f"v {s}" for s in _fmt(mesh.vertices)]
    lines += [f"vt {s}" for s in _fmt(mesh.uvs)]
    lines += [f"vn {s}" for s in _fmt(mesh.normals)]
    lines.append(f"usemtl {MATERIAL_NAME}")
    for a, b, c in mesh.faces + 1:
        lines.append(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}")
    return ("\n".join(lines) + "\n").encode("ascii")


def format_mtl() -> bytes:
    lines = [
        f"newmtl {MATERIAL_NAME}",
        "Ka 0 0 0",
        "Kd 1 1 1",
        "Ks 0 0 0",
        "illum 2",
        f"map_Kd {KD_NAME}",
        f"map_Ks {KS_NAME}",
        f"map_Bump {NORMAL_NAME}",
    ]
    return ("\n".join(lines) + "\n").encode("ascii")


def artifact_bytes(mesh: TriangleMesh, textures: Textures) -> dict[str, bytes]:
    """The five artifact files as bytes, in their canonical order."""
    return {
        OBJ_NAME: format_obj(mesh),
        MTL_NAME: format_mtl(),
        KD_NAME: encode_png(textures.kd),
        KS_NAME: encode_png(textures.ks),
        NORMAL_NAME: encode_png(textures.normal),
    }


@dataclass(frozen=True)
class ArtifactManifest:
    files: dict[str, str]

    def __post_init__(self) -> None:
        if set(self.files) != set(ARTIFACT_NAMES):
            raise InvalidInputError(f"manifest must list exactly {ARTIFACT_NAMES}")

    @property
    def paths(self) -> list[str]:
        return [self.files[name] for name in ARTIFACT_NAMES]

    def to_json(self) -> bytes:
        return json.dumps({name: self.files[name] for name in ARTIFACT_NAMES}, indent=2).encode() + b"\n"

    @classmethod
    def from_json(cls, data: bytes) -> ArtifactManifest:
        return cls(dict(json.loads(data)))


def export_artifacts(mesh: TriangleMesh, textures: Textures, out_dir) -> ArtifactManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, data in artifact_bytes(mesh, textures).items():
        path = out / name
        tmp = path.with_name(f".{name}.tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        files[name] = str(path)
    return ArtifactManifest(files)
