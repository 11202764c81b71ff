"""Anchor bookkeeping and per-frame pose compensation.

Each tracked anchor knows where it was placed (its initial pose) and where
the tracker currently reports it. When the tracking frame jumps, every anchor
appears to move by the same world-frame transform ``J``; the delta
``T_initial o T_current^-1`` then equals ``J^-1`` and composing it on the
left of the reported camera pose cancels the jump.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Hashable, Iterable

import numpy as np

from .codec import PoseBoundsTable
from .errors import ConflictError, EmptySessionError, InvalidInputError, NoValidAnchorsWarning
from .posecore import (
    CameraIntrinsics,
    Quaternion,
    RigidTransform,
    SceneBounds,
    build_pose_row,
    quat_delta,
    quat_to_rotmat,
    rotational_fix,
    truncate_view_matrix,
)

log = logging.getLogger(__name__)


class AnchorLostError(Exception):
    """Raised by :func:`anchor_delta` for an anchor that is not being tracked."""


class Anchor:
    def __init__(self, anchor_id: Hashable, pose: RigidTransform) -> None:
        self.id = anchor_id
        self._initial_pose = pose
        self.current_pose = pose
        self.tracking_valid = True

    @property
    def initial_pose(self) -> RigidTransform:
        return self._initial_pose

    def update(self, pose: RigidTransform, tracking_valid: bool = True) -> None:
        self.current_pose = pose
        self.tracking_valid = tracking_valid

    def __repr__(self) -> str:
        state = "tracking" if self.tracking_valid else "lost"
        return f"Anchor({self.id!r}, {state})"


def anchor_delta(a: Anchor) -> RigidTransform:
    """Transform that carries the anchor's current pose back to its initial pose."""
    if not a.tracking_valid:
        raise AnchorLostError(f"anchor {a.id!r} is not tracking")
    q_delta = quat_delta(a.initial_pose.quaternion, a.current_pose.quaternion)
    R = quat_to_rotmat(q_delta)
    return RigidTransform(R, a.initial_pose.translation - R @ a.current_pose.translation)


def mean_delta(deltas: Iterable[RigidTransform]) -> RigidTransform:
    """Average of rigid deltas.

    Rotations are averaged as quaternions after flipping each onto the first
    one's hemisphere, then renormalized; translations are averaged directly.
    An empty input yields the identity and a :class:`NoValidAnchorsWarning`.
    """
    deltas = list(deltas)
    if not deltas:
        warnings.warn("no valid anchors; frame left uncompensated", NoValidAnchorsWarning, stacklevel=2)
        return RigidTransform.identity()
    quats = np.array([d.quaternion.as_array() for d in deltas])
    signs = np.where(quats @ quats[0] < 0.0, -1.0, 1.0)
    q = Quaternion.from_array((quats * signs[:, None]).mean(axis=0)).normalized()
    t = np.mean([d.translation for d in deltas], axis=0)
    return RigidTransform(quat_to_rotmat(q), t)


def compensate_frame(camera_pose: RigidTransform, mean: RigidTransform) -> RigidTransform:
    return mean.compose(camera_pose)


@dataclass(frozen=True)
class CompensationRecord:
    frame: int
    delta: RigidTransform
    anchor_count: int

    @property
    def compensated(self) -> bool:
        return self.anchor_count > 0


@dataclass
class _Frame:
    camera_pose: RigidTransform
    bounds: SceneBounds
    record: CompensationRecord


def compensation_row(delta: RigidTransform, k: CameraIntrinsics) -> np.ndarray:
    """Encode a delta in the 17-slot layout; ``m`` and ``M`` are written as 0."""
    hwf = np.array([[k.h], [k.w], [k.f]], dtype=np.float64)
    return np.concatenate([np.hstack([delta.view(), hwf]).ravel(), [0.0, 0.0]])


def parse_compensation_row(row: np.ndarray) -> RigidTransform:
    block = np.asarray(row, dtype=np.float64)[:15].reshape(3, 5)
    return RigidTransform(block[:, :3], block[:, 3])


def finalize_pose(camera_pose: RigidTransform, record: CompensationRecord) -> np.ndarray:
    """Compensated 3x4 view matrix with the rotational fix applied."""
    view = truncate_view_matrix(compensate_frame(camera_pose, record.delta).matrix())
    view[:, :3] = rotational_fix(view[:, :3])
    return view


@dataclass
class RecordingSession:
    """Single-writer recorder: update anchors, then record the frame they belong to."""

    intrinsics: CameraIntrinsics
    anchors: dict[Hashable, Anchor] = field(default_factory=dict)
    frames: list[_Frame] = field(default_factory=list)

    def register_anchor(self, anchor_id: Hashable, pose: RigidTransform) -> Anchor:
        if anchor_id in self.anchors:
            raise ConflictError(f"anchor {anchor_id!r} already registered")
        anchor = Anchor(anchor_id, pose)
        self.anchors[anchor_id] = anchor
        return anchor

    def update_anchor(self, anchor_id: Hashable, pose: RigidTransform, tracking_valid: bool = True) -> None:
        try:
            anchor = self.anchors[anchor_id]
        except KeyError:
            raise InvalidInputError(f"unknown anchor {anchor_id!r}") from None
        anchor.update(pose, tracking_valid)

    def current_delta(self) -> tuple[RigidTransform, int]:
        deltas = []
        for anchor in self.anchors.values():
            try:
                deltas.append(anchor_delta(anchor))
            except AnchorLostError:
                log.debug("skipping anchor %r: not tracking", anchor.id)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoValidAnchorsWarning)
            mean = mean_delta(deltas)
        return mean, len(deltas)

    def record_frame(self, camera_pose: RigidTransform, bounds: SceneBounds) -> CompensationRecord:
        mean, count = self.current_delta()
        record = CompensationRecord(len(self.frames), mean, count)
        if count == 0:
            log.warning("frame %d: no valid anchors, passing through uncompensated", record.frame)
        self.frames.append(_Frame(camera_pose, bounds, record))
        return record

    def compensated_poses(self) -> list[RigidTransform]:
        return [compensate_frame(f.camera_pose, f.record.delta) for f in self.frames]

    def finalize_rows(self) -> tuple[PoseBoundsTable, PoseBoundsTable]:
        if not self.frames:
            raise EmptySessionError("cannot finalize a session with no frames")
        poses, comp = [], []
        for frame in self.frames:
            view = finalize_pose(frame.camera_pose, frame.record)
            poses.append(build_pose_row(view, self.intrinsics, frame.bounds))
            comp.append(compensation_row(frame.record.delta, self.intrinsics))
        return PoseBoundsTable(np.array(poses)), PoseBoundsTable(np.array(comp))


def register_anchor(session: RecordingSession, anchor_id: Hashable, pose: RigidTransform) -> Anchor:
    return session.register_anchor(anchor_id, pose)


def finalize_rows(session: RecordingSession) -> tuple[PoseBoundsTable, PoseBoundsTable]:
    return session.finalize_rows()
