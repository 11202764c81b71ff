"""Quaternions, rigid transforms, view matrices and the 17-value pose row.

Conventions:
    - Quaternions are stored scalar first, ``(a, b, c, d) = a + bi + cj + dk``.
    - Poses are camera-to-world transforms in the OpenGL right-handed frame;
      the camera looks down its local ``-z`` axis with ``+y`` up.
    - Everything is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InvalidInputError

UNIT_TOLERANCE = 1e-6
ROTATION_TOLERANCE = 1e-9

# Element order of one poses_bounds row.
POSE_ROW_LAYOUT = (
    "r11", "r12", "r13", "tx", "h",
    "r21", "r22", "r23", "ty", "w",
    "r31", "r32", "r33", "tz", "f",
    "m", "M",
)
POSE_ROW_INDEX = {name: i for i, name in enumerate(POSE_ROW_LAYOUT)}
VIEW_SLOTS = (0, 1, 2, 3, 5, 6, 7, 8, 10, 11, 12, 13)


@dataclass(frozen=True)
class Quaternion:
    a: float
    b: float
    c: float
    d: float

    @classmethod
    def identity(cls) -> Quaternion:
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values: Iterable[float]) -> Quaternion:
        a, b, c, d = (float(v) for v in values)
        return cls(a, b, c, d)

    @classmethod
    def from_axis_angle(cls, axis: Iterable[float], angle: float) -> Quaternion:
        axis = np.asarray(list(axis), dtype=np.float64)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise InvalidInputError("rotation axis has zero length")
        s = math.sin(angle / 2.0) / n
        return cls(math.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s)

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d], dtype=np.float64)

    def norm(self) -> float:
        return math.sqrt(self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d)

    def normalized(self) -> Quaternion:
        n = self.norm()
        if n == 0.0:
            raise InvalidInputError("cannot normalize the zero quaternion")
        return Quaternion(self.a / n, self.b / n, self.c / n, self.d / n)

    def canonical(self) -> Quaternion:
        """Return the representative of ``{q, -q}`` whose first nonzero component is positive."""
        for v in (self.a, self.b, self.c, self.d):
            if v > 0.0:
                return self
            if v < 0.0:
                return Quaternion(-self.a, -self.b, -self.c, -self.d)
        return self

    def __neg__(self) -> Quaternion:
        return Quaternion(-self.a, -self.b, -self.c, -self.d)

    def __mul__(self, other: Quaternion) -> Quaternion:
        return quat_mul(self, other)


def quat_conjugate(q: Quaternion) -> Quaternion:
    return Quaternion(q.a, -q.b, -q.c, -q.d)


def quat_mul(q: Quaternion, r: Quaternion) -> Quaternion:
    """Hamilton product ``q x r``."""
    q0, q1, q2, q3 = q.a, q.b, q.c, q.d
    r0, r1, r2, r3 = r.a, r.b, r.c, r.d
    return Quaternion(
        r0 * q0 - r1 * q1 - r2 * q2 - r3 * q3,
        r0 * q1 + r1 * q0 - r2 * q3 + r3 * q2,
        r0 * q2 + r1 * q3 + r2 * q0 - r3 * q1,
        r0 * q3 - r1 * q2 + r2 * q1 + r3 * q0,
    )


def quat_delta(target: Quaternion, current: Quaternion) -> Quaternion:
    """Rotation that carries ``current`` onto ``target``: ``target * current^-1``.

    The inverse is taken as the conjugate, so ``current`` must be unit length.
    """
    if abs(current.norm() - 1.0) > UNIT_TOLERANCE:
        raise InvalidInputError(f"current quaternion is not unit (norm {current.norm():.9g})")
    return quat_mul(target, quat_conjugate(current))


def quat_to_rotmat(q: Quaternion) -> np.ndarray:
    if q.norm() == 0.0:
        raise InvalidInputError("zero quaternion has no rotation")
    a, b, c, d = q.normalized().as_array()
    return np.array(
        [
            [1 - 2 * (c * c + d * d), 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), 1 - 2 * (b * b + d * d), 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), 1 - 2 * (b * b + c * c)],
        ],
        dtype=np.float64,
    )


def is_rotation(R: np.ndarray, tol: float = ROTATION_TOLERANCE) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(
        np.max(np.abs(R.T @ R - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol
    )


def rotmat_to_quat(R: np.ndarray) -> Quaternion:
    """Convert a rotation matrix to a unit quaternion (Shepperd's method).

    The result is canonicalized so that ``a >= 0`` (and, for half-turns, the
    first nonzero imaginary part is positive).
    """
    R = np.asarray(R, dtype=np.float64)
    if not is_rotation(R, UNIT_TOLERANCE):
        raise InvalidInputError("matrix is not a proper rotation")
    m00, m11, m22 = R[0, 0], R[1, 1], R[2, 2]
    trace = m00 + m11 + m22
    if trace > 0.0:
        s = 2.0 * math.sqrt(1.0 + trace)
        q = (0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
    elif m00 >= m11 and m00 >= m22:
        s = 2.0 * math.sqrt(1.0 + m00 - m11 - m22)
        q = ((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
    elif m11 >= m22:
        s = 2.0 * math.sqrt(1.0 + m11 - m00 - m22)
        q = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s)
    else:
        s = 2.0 * math.sqrt(1.0 + m22 - m00 - m11)
        q = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s)
    return Quaternion(*q).normalized().canonical()


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation plus translation; ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        R = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise InvalidInputError("translation must be a finite 3-vector")
        if not is_rotation(R):
            raise InvalidInputError("rotation block is not orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, q: Quaternion, translation: Iterable[float] = (0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(quat_to_rotmat(q), np.asarray(list(translation), dtype=np.float64))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> RigidTransform:
        M = np.asarray(M, dtype=np.float64)
        if M.shape == (4, 4):
            M = truncate_view_matrix(M)
        if M.shape != (3, 4):
            raise InvalidInputError(f"expected a 3x4 or 4x4 matrix, got {M.shape}")
        return cls(M[:, :3], M[:, 3])

    @property
    def quaternion(self) -> Quaternion:
        return rotmat_to_quat(self.rotation)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def view(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self o other``: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def allclose(self, other: RigidTransform, atol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __repr__(self) -> str:
        q = self.quaternion
        return (
            f"RigidTransform(q=({q.a:.6g}, {q.b:.6g}, {q.c:.6g}, {q.d:.6g}), "
            f"t={np.array2string(self.translation, precision=6)})"
        )


def geodesic_angle(R1: np.ndarray, R2: np.ndarray) -> float:
    """Angle in radians of the relative rotation ``R1^T R2``."""
    q = rotmat_to_quat(np.asarray(R1).T @ np.asarray(R2))
    v = math.sqrt(q.b * q.b + q.c * q.c + q.d * q.d)
    return 2.0 * math.atan2(v, abs(q.a))


@dataclass(frozen=True)
class CameraIntrinsics:
    h: float
    w: float
    f: float

    def __post_init__(self) -> None:
        for name in ("h", "w", "f"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidInputError(f"intrinsic {name} must be positive, got {v!r}")

    @property
    def width(self) -> int:
        return int(round(self.w))

    @property
    def height(self) -> int:
        return int(round(self.h))


@dataclass(frozen=True)
class SceneBounds:
    m: float
    M: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.m) and math.isfinite(self.M)):
            raise InvalidInputError("scene bounds must be finite")
        if not 0 < self.m <= self.M:
            raise InvalidInputError(f"scene bounds need 0 < m <= M, got m={self.m}, M={self.M}")


def truncate_view_matrix(M: np.ndarray) -> np.ndarray:
    """Drop the homogeneous row of a 4x4 pose, returning ``[R | t]``."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (4, 4):
        raise InvalidInputError(f"expected a 4x4 matrix, got shape {M.shape}")
    if np.max(np.abs(M[3] - (0.0, 0.0, 0.0, 1.0))) > 1e-9:
        raise InvalidInputError(f"last row must be (0, 0, 0, 1), got {M[3].tolist()}")
    return M[:3].copy()


def rotational_fix(R: np.ndarray) -> np.ndarray:
    """Columns ``(c1, c2, c3) -> (-c2, c1, c3)``."""
    R = np.asarray(R, dtype=np.float64)
    out = R.copy()
    out[..., :, 0] = -R[..., :, 1]
    out[..., :, 1] = R[..., :, 0]
    return out


def undo_rotational_fix(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotational_fix`: negate the first column, then swap back."""
    R = np.asarray(R, dtype=np.float64)
    out = R.copy()
    out[..., :, 0] = R[..., :, 1]
    out[..., :, 1] = -R[..., :, 0]
    return out


def build_pose_row(view: np.ndarray, k: CameraIntrinsics, b: SceneBounds) -> np.ndarray:
    view = np.asarray(view, dtype=np.float64)
    if view.shape != (3, 4):
        raise InvalidInputError(f"view matrix must be 3x4, got {view.shape}")
    hwf = np.array([[k.h], [k.w], [k.f]], dtype=np.float64)
    return np.concatenate([np.hstack([view, hwf]).ravel(), [b.m, b.M]])


def parse_pose_row(row: np.ndarray) -> tuple[np.ndarray, CameraIntrinsics, SceneBounds]:
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    if row.shape != (17,):
        raise InvalidInputError(f"pose row must have 17 values, got {row.size}")
    bad = np.flatnonzero(~np.isfinite(row))
    if bad.size:
        i = int(bad[0])
        raise InvalidInputError(f"non-finite value at index {i} ({POSE_ROW_LAYOUT[i]})")
    for name in ("h", "w", "f", "m"):
        i = POSE_ROW_INDEX[name]
        if row[i] <= 0:
            raise InvalidInputError(f"index {i} ({name}) must be positive, got {row[i]}")
    if row[15] > row[16]:
        raise InvalidInputError(f"index 15 (m) exceeds index 16 (M): {row[15]} > {row[16]}")
    block = row[:15].reshape(3, 5)
    h, w, f = block[:, 4]
    return block[:, :4].copy(), CameraIntrinsics(h, w, f), SceneBounds(row[15], row[16])
