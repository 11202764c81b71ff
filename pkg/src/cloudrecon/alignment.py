"""Rigid-body alignment of two camera tracks and the drift difference matrix.

A track recorded on the phone and one recovered by structure-from-motion
live in different frames (and scales). Both point sets are centred, a 3x3
linear map is solved from three well-conditioned vector pairs, and the
mapped reference is compared slot by slot with the recorded table.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .codec import PoseBoundsTable
from .errors import DegenerateError, ValidationError
from .posecore import VIEW_SLOTS, rotational_fix, undo_rotational_fix

log = logging.getLogger(__name__)

MAX_CONDITION = 1e8


def center(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        raise ValidationError("cannot centre an empty point set")
    centroid = points.mean(axis=0)
    return points - centroid, centroid


def select_three_vectors(points: np.ndarray) -> tuple[int, int, int]:
    """Greedy max-volume pick: longest vector, then largest cross product, then largest |det|."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 3:
        raise DegenerateError(f"need at least 3 points, got {points.shape[0]}")
    i = int(np.argmax(np.linalg.norm(points, axis=1)))
    j = int(np.argmax(np.linalg.norm(np.cross(points[i], points), axis=1)))
    k = int(np.argmax(np.abs(np.cross(points[i], points[j]) @ points.T)))
    if len({i, j, k}) < 3:
        raise DegenerateError("point set does not span three dimensions")
    return i, j, k


def solve_three_vector_transform(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """The 3x3 matrix ``T`` with ``T @ src[i] == dst[i]`` for the three given vectors."""
    S = np.asarray(src, dtype=np.float64).reshape(3, 3).T
    D = np.asarray(dst, dtype=np.float64).reshape(3, 3).T
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise DegenerateError(f"source vectors are degenerate (condition number {cond:.3g})")
    return np.linalg.solve(S.T, D.T).T


def apply_transform(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ np.asarray(T, dtype=np.float64).T


@dataclass(frozen=True, eq=False)
class Alignment:
    """``x -> transform @ (x - src_centroid) + dst_centroid``."""

    transform: np.ndarray
    src_centroid: np.ndarray
    dst_centroid: np.ndarray
    picked: tuple[int, int, int] | None
    method: str = "three-vector"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return apply_transform(self.transform, np.asarray(points) - self.src_centroid) + self.dst_centroid

    @property
    def scale(self) -> float:
        return float(np.cbrt(np.linalg.det(self.transform)))

    @property
    def rotation(self) -> np.ndarray:
        U, _, Vt = np.linalg.svd(self.transform)
        return U @ np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))]) @ Vt


def align_point_sets(src: np.ndarray, dst: np.ndarray) -> Alignment:
    src_c, src_mean = center(src)
    dst_c, dst_mean = center(dst)
    if src_c.shape != dst_c.shape:
        raise ValidationError(f"point sets differ in size: {src_c.shape[0]} vs {dst_c.shape[0]}")
    picked = select_three_vectors(src_c)
    T = solve_three_vector_transform(src_c[list(picked)], dst_c[list(picked)])
    return Alignment(T, src_mean, dst_mean, picked)


def align_or_fit(src: np.ndarray, dst: np.ndarray) -> Alignment:
    """Three-vector alignment, or the least-squares similarity when ``src`` is coplanar."""
    try:
        return align_point_sets(src, dst)
    except DegenerateError as exc:
        log.info("three-vector solve unavailable (%s); using least-squares similarity", exc)
    s, R, t = umeyama_similarity(src, dst)
    zero = np.zeros(3)
    return Alignment(s * R, zero, t, None, method="least-squares")


def umeyama_similarity(src: np.ndarray, dst: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares ``(s, R, t)`` minimizing ``sum |dst_i - s R src_i - t|^2``."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape or src.shape[0] < 3:
        raise DegenerateError("need at least 3 corresponding points")
    src_c, mu_s = center(src)
    dst_c, mu_d = center(dst)
    sv = np.linalg.svd(src_c, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateError("source points are collinear")
    n = src.shape[0]
    cov = dst_c.T @ src_c / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_src = (src_c**2).sum() / n
    s = float(np.trace(np.diag(D) @ S) / var_src)
    t = mu_d - s * R @ mu_s
    return s, R, t


def positions(table: PoseBoundsTable) -> np.ndarray:
    return table.rows[:, [3, 8, 13]].copy()


def align_tables(table: PoseBoundsTable, reference: PoseBoundsTable) -> tuple[PoseBoundsTable, Alignment]:
    """Map ``reference`` into ``table``'s frame: positions by the solved map, rotations by its rotation factor."""
    if len(table) != len(reference):
        raise ValidationError(f"row counts differ: {len(table)} vs {len(reference)}")
    alignment = align_or_fit(positions(reference), positions(table))
    R = alignment.rotation
    rows = reference.rows.copy()
    moved = alignment(positions(reference))
    for i, row in enumerate(rows):
        block = row[:15].reshape(3, 5)
        block[:, :3] = rotational_fix(R @ undo_rotational_fix(block[:, :3]))
        block[:, 3] = moved[i]
        row[:15] = block.ravel()
    return PoseBoundsTable(rows), alignment


@dataclass(frozen=True, eq=False)
class DifferenceMatrix:
    values: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    @property
    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["row", *(f"d{i}" for i in range(1, 13)), "norm"])
        for i, (row, norm) in enumerate(zip(self.values, self.row_norms)):
            writer.writerow([i, *(repr(float(v)) for v in row), repr(float(norm))])
        writer.writerow(["total", *([""] * 12), repr(self.norm)])
        return buf.getvalue()


def difference_matrix(a: PoseBoundsTable, b: PoseBoundsTable) -> DifferenceMatrix:
    if a.rows.shape != b.rows.shape:
        raise ValidationError(f"table shapes differ: {a.rows.shape} vs {b.rows.shape}")
    slots = list(VIEW_SLOTS)
    return DifferenceMatrix(a.rows[:, slots] - b.rows[:, slots])
