"""Synthetic stand-in for the phone-side pose recorder.

Generates an orbit of camera poses around an analytic shape, ray-casts
shaded images and ground-truth silhouettes, derives per-frame scene bounds
from the hit distances, places anchors, and injects piecewise-constant
tracking jumps into the reported camera and anchor poses.

Pixel convention (shared with :mod:`cloudrecon.reconstruct.carving`)::

    u = w/2 + f * x_c / -z_c        v = h/2 - f * y_c / -z_c

with pixel ``(row i, col j)`` covering ``[j, j+1) x [i, i+1)`` in ``(u, v)``.
"""

from __future__ import annotations

import io
import logging
import math
import warnings
import zipfile
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .codec import FIXED_ZIP_TIME, DatasetArchive, decode_png, encode_png, format_manifest, parse_manifest
from .compensation import RecordingSession
from .errors import DegenerateError, FormatError, InvalidInputError, VisibilityError, VisibilityWarning
from .posecore import CameraIntrinsics, Quaternion, RigidTransform, SceneBounds

log = logging.getLogger(__name__)

BACKGROUND = (0, 0, 0)
AMBIENT = 64.0
DIFFUSE = 160.0
LIGHT_DIRECTION = np.array([0.3, 0.8, 0.5]) / np.linalg.norm([0.3, 0.8, 0.5])


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise InvalidInputError(f"sphere radius must be positive, got {self.radius}")

    def in_front_of(self, pose: RigidTransform) -> bool:
        center = pose.inverse().apply(np.asarray(self.center, dtype=np.float64))
        return bool(-center[2] > self.radius)

    def contains(self, points: np.ndarray) -> np.ndarray:
        d = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        return np.einsum("...i,...i->...", d, d) <= self.radius**2

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """First-hit distance along unit ``dirs`` (inf on miss) and surface normals."""
        oc = origin - np.asarray(self.center, dtype=np.float64)
        b = dirs @ oc
        disc = b * b - (oc @ oc - self.radius**2)
        hit = disc >= 0.0
        root = np.sqrt(np.where(hit, disc, 0.0))
        t_near, t_far = -b - root, -b + root
        t = np.where(t_near > 0.0, t_near, t_far)
        t = np.where(hit & (t > 0.0), t, np.inf)
        points = origin + dirs * np.where(np.isfinite(t), t, 0.0)[..., None]
        normals = (points - np.asarray(self.center)) / self.radius
        return t, normals


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]

    def __post_init__(self) -> None:
        if min(self.half_extents) <= 0:
            raise InvalidInputError(f"box half extents must be positive, got {self.half_extents}")

    def corners(self) -> np.ndarray:
        c, h = np.asarray(self.center, dtype=np.float64), np.asarray(self.half_extents, dtype=np.float64)
        return c + h * np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])

    def in_front_of(self, pose: RigidTransform) -> bool:
        return bool(np.all(pose.inverse().apply(self.corners())[:, 2] < 0.0))

    def contains(self, points: np.ndarray) -> np.ndarray:
        d = np.abs(np.asarray(points, dtype=np.float64) - np.asarray(self.center))
        return np.all(d <= np.asarray(self.half_extents), axis=-1)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.center) - np.asarray(self.half_extents)
        hi = np.asarray(self.center) + np.asarray(self.half_extents)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1, t2 = (lo - origin) * inv, (hi - origin) * inv
        t1 = np.nan_to_num(t1, nan=-np.inf)
        t2 = np.nan_to_num(t2, nan=np.inf)
        tmin, tmax = np.minimum(t1, t2), np.maximum(t1, t2)
        t_enter, t_exit = tmin.max(axis=-1), tmax.min(axis=-1)
        hit = (t_enter <= t_exit) & (t_exit > 0.0)
        t = np.where(t_enter > 0.0, t_enter, t_exit)
        t = np.where(hit, t, np.inf)
        axis = np.argmax(tmin, axis=-1)
        normals = np.zeros(dirs.shape)
        np.put_along_axis(normals, axis[..., None], -np.sign(np.take_along_axis(dirs, axis[..., None], -1)), -1)
        return t, normals


SceneShape = Union[Sphere, Box]


def parse_shape(spec: str) -> SceneShape:
    """``sphere:R`` or ``box:HX,HY,HZ``, centred at the origin."""
    kind, _, args = spec.partition(":")
    try:
        values = [float(v) for v in args.split(",")] if args else []
    except ValueError:
        raise InvalidInputError(f"bad shape {spec!r}") from None
    if kind == "sphere" and len(values) == 1:
        return Sphere((0.0, 0.0, 0.0), values[0])
    if kind == "box" and len(values) in (1, 3):
        return Box((0.0, 0.0, 0.0), tuple(values * 3 if len(values) == 1 else values))
    raise InvalidInputError(f"bad shape {spec!r}; expected sphere:R or box:HX,HY,HZ")


# -- camera geometry ----------------------------------------------------------


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> RigidTransform:
    """Camera-to-world pose at ``position`` whose -z axis points at ``target``."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    dist = np.linalg.norm(forward)
    if dist < 1e-12:
        raise DegenerateError("camera coincides with its look-at target")
    z_axis = -forward / dist
    x_axis = np.cross(np.asarray(up, dtype=np.float64), z_axis)
    n = np.linalg.norm(x_axis)
    if n < 1e-12:
        raise DegenerateError("view direction is parallel to the up vector")
    x_axis /= n
    y_axis = np.cross(z_axis, x_axis)
    return RigidTransform(np.column_stack([x_axis, y_axis, z_axis]), position)


def generate_orbit(n: int, radius: float, height: float = 0.0, target=(0.0, 0.0, 0.0)) -> list[RigidTransform]:
    """``n`` evenly spaced look-at poses on a horizontal circle around ``target``."""
    if n < 2:
        raise InvalidInputError(f"orbit needs at least 2 frames, got {n}")
    if not radius > 0:
        raise InvalidInputError(f"orbit radius must be positive, got {radius}")
    target = np.asarray(target, dtype=np.float64)
    track = []
    for i in range(n):
        theta = 2.0 * math.pi * i / n
        position = target + (radius * math.cos(theta), height, radius * math.sin(theta))
        track.append(look_at(position, target))
    return track


def pixel_rays(k: CameraIntrinsics) -> np.ndarray:
    """Unit ray directions in camera coordinates through every pixel centre, shape (h, w, 3)."""
    w, h = k.width, k.height
    u = np.arange(w, dtype=np.float64) + 0.5
    v = np.arange(h, dtype=np.float64) + 0.5
    x = (u - k.w / 2.0) / k.f
    y = -(v - k.h / 2.0) / k.f
    dirs = np.empty((h, w, 3))
    dirs[..., 0] = x[None, :]
    dirs[..., 1] = y[:, None]
    dirs[..., 2] = -1.0
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def pixel_to_ray(u: float, v: float, pose: RigidTransform, k: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """World-space origin and unit direction of the ray through continuous pixel ``(u, v)``."""
    d = np.array([(u - k.w / 2.0) / k.f, -(v - k.h / 2.0) / k.f, -1.0])
    d = pose.rotation @ (d / np.linalg.norm(d))
    return pose.translation.copy(), d


@dataclass
class ViewTrace:
    hit: np.ndarray
    distance: np.ndarray
    normal: np.ndarray


def _check_in_front(pose: RigidTransform, shape: SceneShape, frame: int | None) -> None:
    if not shape.in_front_of(pose):
        raise VisibilityError("shape is not entirely in front of the camera", frame)


def trace_view(pose: RigidTransform, shape: SceneShape, k: CameraIntrinsics, frame: int | None = None) -> ViewTrace:
    _check_in_front(pose, shape, frame)
    dirs = pixel_rays(k) @ pose.rotation.T
    t, normals = shape.intersect(pose.translation, dirs)
    hit = np.isfinite(t)
    if not hit.any():
        where = "" if frame is None else f"frame {frame}: "
        warnings.warn(f"{where}shape is outside the view frustum", VisibilityWarning, stacklevel=3)
    return ViewTrace(hit, t, normals)


def shade(trace: ViewTrace) -> tuple[np.ndarray, np.ndarray]:
    lambert = np.clip(trace.normal @ LIGHT_DIRECTION, 0.0, 1.0)
    gray = np.rint(AMBIENT + DIFFUSE * lambert).astype(np.uint8)
    image = np.empty(trace.hit.shape + (3,), dtype=np.uint8)
    image[...] = BACKGROUND
    image[trace.hit] = gray[trace.hit][:, None]
    silhouette = np.where(trace.hit, 255, 0).astype(np.uint8)
    return image, silhouette


def render_views(
    track: Sequence[RigidTransform], shape: SceneShape, k: CameraIntrinsics
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    images, silhouettes = [], []
    for i, pose in enumerate(track):
        image, silhouette = shade(trace_view(pose, shape, k, i))
        images.append(image)
        silhouettes.append(silhouette)
    return images, silhouettes


def _bounds_from_trace(trace: ViewTrace, frame: int | None = None) -> SceneBounds:
    if not trace.hit.any():
        raise VisibilityError("no ray hits the shape; cannot derive scene bounds", frame)
    d = trace.distance[trace.hit]
    return SceneBounds(float(d.min()), float(d.max()))


def compute_bounds(pose: RigidTransform, shape: SceneShape, k: CameraIntrinsics) -> SceneBounds:
    """Nearest and farthest first-hit distance over the silhouette pixels."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", VisibilityWarning)
        return _bounds_from_trace(trace_view(pose, shape, k))


# -- drift ----------------------------------------------------------------------


@dataclass(frozen=True)
class DriftEvent:
    frame: int
    jump: RigidTransform


def cumulative_jumps(n_frames: int, events: Sequence[DriftEvent]) -> list[RigidTransform]:
    frames = [e.frame for e in events]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise InvalidInputError(f"drift event frames must strictly increase, got {frames}")
    jumps, current, pending = [], RigidTransform.identity(), list(events)
    for t in range(n_frames):
        while pending and pending[0].frame <= t:
            current = pending.pop(0).jump.compose(current)
        jumps.append(current)
    return jumps


def inject_drift(
    track: Sequence[RigidTransform],
    anchors: dict,
    events: Sequence[DriftEvent],
) -> tuple[list[RigidTransform], list[dict]]:
    """Apply accumulated jumps ``J_t`` to the camera track and to each anchor's initial pose."""
    jumps = cumulative_jumps(len(track), events)
    reported = [J.compose(pose) for J, pose in zip(jumps, track)]
    anchor_poses = [{aid: J.compose(p) for aid, p in anchors.items()} for J in jumps]
    return reported, anchor_poses


def random_rotation(rng: np.random.Generator, max_angle: float) -> Quaternion:
    axis = rng.normal(size=3)
    return Quaternion.from_axis_angle(axis, rng.uniform(0.0, max_angle))


def random_drift_events(
    rng: np.random.Generator,
    count: int,
    n_frames: int,
    max_translation: float = 0.2,
    max_rotation_deg: float = 10.0,
) -> list[DriftEvent]:
    if count > n_frames - 1:
        raise InvalidInputError(f"cannot place {count} jumps in {n_frames} frames")
    frames = np.sort(rng.choice(np.arange(1, n_frames), size=count, replace=False))
    events = []
    for k in frames:
        direction = rng.normal(size=3)
        t = direction / np.linalg.norm(direction) * rng.uniform(0.0, max_translation)
        q = random_rotation(rng, math.radians(max_rotation_deg))
        events.append(DriftEvent(int(k), RigidTransform.from_quaternion(q, t)))
    return events


def parse_drift(spec: str) -> DriftEvent:
    """``FRAME:TX,TY,TZ[:AX,AY,AZ,DEG]``."""
    parts = spec.split(":")
    try:
        frame = int(parts[0])
        t = [float(v) for v in parts[1].split(",")]
        rot = [float(v) for v in parts[2].split(",")] if len(parts) > 2 else [0.0, 0.0, 1.0, 0.0]
    except (IndexError, ValueError):
        raise InvalidInputError(f"bad drift event {spec!r}; expected FRAME:TX,TY,TZ[:AX,AY,AZ,DEG]") from None
    if len(t) != 3 or len(rot) != 4 or len(parts) > 3:
        raise InvalidInputError(f"bad drift event {spec!r}")
    q = Quaternion.from_axis_angle(rot[:3], math.radians(rot[3]))
    return DriftEvent(frame, RigidTransform.from_quaternion(q, t))


# -- sessions -------------------------------------------------------------------


@dataclass
class SynthConfig:
    frames: int = 8
    orbit_radius: float = 2.0
    height: float = 0.0
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    shape: SceneShape = field(default_factory=lambda: Sphere((0.0, 0.0, 0.0), 0.35))
    image_size: int = 512
    focal: float = 700.0
    anchors: int = 4
    events: Sequence[DriftEvent] = ()
    random_jumps: int = 0
    anchor_noise: float = 0.0
    anchor_dropout: float = 0.0
    seed: int = 0


@dataclass
class CaptureSession:
    true_track: list[RigidTransform]
    reported_track: list[RigidTransform]
    anchor_initial: dict
    anchor_reported: list[dict]
    anchor_valid: list[dict]
    intrinsics: CameraIntrinsics
    bounds: list[SceneBounds]
    images: list[np.ndarray]
    silhouettes: list[np.ndarray]
    events: list[DriftEvent] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.true_track)
        if not (len(self.reported_track) == n == len(self.images) == len(self.anchor_reported)):
            raise InvalidInputError("capture session tracks and images must have equal length")


def _perturb(pose: RigidTransform, rng: np.random.Generator, sigma: float) -> RigidTransform:
    rotvec = rng.normal(scale=sigma, size=3)
    angle = float(np.linalg.norm(rotvec))
    dq = Quaternion.from_axis_angle(rotvec, angle) if angle > 0 else Quaternion.identity()
    noise = RigidTransform.from_quaternion(dq, rng.normal(scale=sigma, size=3))
    return RigidTransform(noise.rotation @ pose.rotation, pose.translation + noise.translation)


def simulate_capture(config: SynthConfig) -> CaptureSession:
    """Build a full synthetic session; every random draw comes from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    k = CameraIntrinsics(config.image_size, config.image_size, config.focal)
    track = generate_orbit(config.frames, config.orbit_radius, config.height, config.target)
    images, silhouettes, bounds = [], [], []
    for i, pose in enumerate(track):
        trace = trace_view(pose, config.shape, k, i)
        image, silhouette = shade(trace)
        images.append(image)
        silhouettes.append(silhouette)
        bounds.append(_bounds_from_trace(trace, i))

    anchors = {}
    for a in range(config.anchors):
        position = np.asarray(config.target) + rng.uniform(-1.0, 1.0, size=3) * (1.0, 0.2, 1.0)
        anchors[f"anchor-{a}"] = RigidTransform.from_quaternion(random_rotation(rng, math.pi), position)

    events = list(config.events)
    if config.random_jumps:
        events = random_drift_events(rng, config.random_jumps, config.frames)
    reported, anchor_poses = inject_drift(track, anchors, events)

    valid = []
    for t, poses in enumerate(anchor_poses):
        if config.anchor_noise > 0:
            anchor_poses[t] = {aid: _perturb(p, rng, config.anchor_noise) for aid, p in poses.items()}
        if config.anchor_dropout > 0:
            valid.append({aid: bool(rng.random() >= config.anchor_dropout) for aid in poses})
        else:
            valid.append({aid: True for aid in poses})

    return CaptureSession(
        true_track=track,
        reported_track=reported,
        anchor_initial=anchors,
        anchor_reported=anchor_poses,
        anchor_valid=valid,
        intrinsics=k,
        bounds=bounds,
        images=images,
        silhouettes=silhouettes,
        events=events,
        metadata={"seed": str(config.seed), "source": "synthetic"},
    )


def record_session(session: CaptureSession) -> RecordingSession:
    """Replay a capture through the anchor-compensating recorder."""
    recorder = RecordingSession(session.intrinsics)
    for aid, pose in session.anchor_initial.items():
        recorder.register_anchor(aid, pose)
    for t, camera in enumerate(session.reported_track):
        for aid, pose in session.anchor_reported[t].items():
            recorder.update_anchor(aid, pose, session.anchor_valid[t].get(aid, True))
        recorder.record_frame(camera, session.bounds[t])
    return recorder


def export_session(session: CaptureSession) -> DatasetArchive:
    poses, compensation = record_session(session).finalize_rows()
    archive = DatasetArchive(
        images=list(session.images),
        poses_bounds=poses,
        compensation=compensation,
        intrinsics=session.intrinsics,
        metadata=dict(session.metadata),
    )
    archive.validate()
    return archive


# -- raw recordings ---------------------------------------------------------------
#
# A raw recording is the uncompensated session: reported camera poses, anchor
# observations and images. ``replay_raw`` turns it into a compensated archive.


def _npy(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(array), allow_pickle=False)
    return buf.getvalue()


def _member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=FIXED_ZIP_TIME)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def export_raw(session: CaptureSession) -> bytes:
    ids = list(session.anchor_initial)
    n = len(session.reported_track)
    camera = np.array([p.matrix().ravel() for p in session.reported_track])
    initial = np.array([session.anchor_initial[a].matrix().ravel() for a in ids]).reshape(len(ids), 16)
    observed = np.array(
        [[session.anchor_reported[t][a].matrix().ravel() for a in ids] for t in range(n)]
    ).reshape(n, len(ids), 16)
    valid = np.array([[session.anchor_valid[t][a] for a in ids] for t in range(n)], dtype=bool).reshape(n, len(ids))
    bounds = np.array([[b.m, b.M] for b in session.bounds])
    manifest = {
        "frames": str(n),
        "anchors": ",".join(ids),
        "height": repr(float(session.intrinsics.h)),
        "width": repr(float(session.intrinsics.w)),
        "focal": repr(float(session.intrinsics.f)),
        **{f"meta.{k}": v for k, v in session.metadata.items()},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _member(zf, "manifest.txt", format_manifest(manifest))
        _member(zf, "camera_poses.npy", _npy(camera))
        _member(zf, "anchor_initial.npy", _npy(initial))
        _member(zf, "anchor_poses.npy", _npy(observed))
        _member(zf, "anchor_valid.npy", _npy(valid))
        _member(zf, "bounds.npy", _npy(bounds))
        for i, img in enumerate(session.images):
            _member(zf, f"images/{i:04d}.png", encode_png(img))
    return buf.getvalue()


def load_raw(data: bytes) -> CaptureSession:
    """Rebuild the reported half of a session (true track is unknown and mirrors the report)."""
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile as exc:
        raise FormatError(f"raw recording is not a ZIP archive: {exc}") from exc
    with zf:
        manifest = parse_manifest(zf.read("manifest.txt"))
        load = lambda name: np.load(io.BytesIO(zf.read(name)), allow_pickle=False)  # noqa: E731
        n = int(manifest["frames"])
        ids = [a for a in manifest["anchors"].split(",") if a]
        camera = load("camera_poses.npy").reshape(n, 4, 4)
        initial = load("anchor_initial.npy").reshape(len(ids), 4, 4)
        observed = load("anchor_poses.npy").reshape(n, len(ids), 4, 4)
        valid = load("anchor_valid.npy").reshape(n, len(ids))
        bounds = load("bounds.npy").reshape(n, 2)
        images = [decode_png(zf.read(f"images/{i:04d}.png")) for i in range(n)]
    reported = [RigidTransform.from_matrix(m) for m in camera]
    return CaptureSession(
        true_track=reported,
        reported_track=reported,
        anchor_initial={a: RigidTransform.from_matrix(initial[j]) for j, a in enumerate(ids)},
        anchor_reported=[{a: RigidTransform.from_matrix(observed[t, j]) for j, a in enumerate(ids)} for t in range(n)],
        anchor_valid=[{a: bool(valid[t, j]) for j, a in enumerate(ids)} for t in range(n)],
        intrinsics=CameraIntrinsics(float(manifest["height"]), float(manifest["width"]), float(manifest["focal"])),
        bounds=[SceneBounds(float(lo), float(hi)) for lo, hi in bounds],
        images=images,
        silhouettes=[],
        metadata={k[5:]: v for k, v in manifest.items() if k.startswith("meta.")},
    )


def replay_raw(data: bytes) -> DatasetArchive:
    return export_session(load_raw(data))
