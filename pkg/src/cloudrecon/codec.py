"""Bit-exact poses_bounds NPY I/O and the zipped dataset archive.

Only the subset of NPY 1.0 that a poses_bounds table needs is supported:
little-endian float64, C order, shape ``(N, 17)``.
"""

from __future__ import annotations

import ast
import io
import re
import struct
import zipfile
from dataclasses import dataclass, field, replace
from typing import BinaryIO

import numpy as np
from PIL import Image

from .errors import FormatError, TruncatedDataError, UnsupportedLayoutError, ValidationError
from .posecore import CameraIntrinsics

NPY_MAGIC = b"\x93NUMPY"
NPY_VERSION = b"\x01\x00"
NPY_ALIGN = 64
ROW_WIDTH = 17

MANIFEST_NAME = "manifest.txt"
POSES_NAME = "poses_bounds.npy"
COMPENSATION_NAME = "compensation.npy"
IMAGE_DIR = "images"
MASK_DIR = "masks"
IMAGE_EXT = ".png"
FIXED_ZIP_TIME = (1980, 1, 1, 0, 0, 0)

_FRAME_NAME = re.compile(r"^(\d{4,})(\.[A-Za-z0-9]+)$")


@dataclass(frozen=True, eq=False)
class PoseBoundsTable:
    """N x 17 float64 table, row ``i`` describing image ``i``."""

    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.array(self.rows, dtype="<f8", order="C")
        if rows.ndim != 2 or rows.shape[1] != ROW_WIDTH or rows.shape[0] < 1:
            raise ValidationError(f"poses_bounds table must be N x {ROW_WIDTH} with N >= 1, got {rows.shape}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.rows[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoseBoundsTable):
            return NotImplemented
        return self.rows.shape == other.rows.shape and bool(np.array_equal(self.rows, other.rows))

    def __hash__(self) -> int:
        return hash(self.rows.tobytes())


def _npy_header(n_rows: int) -> bytes:
    text = f"{{'descr': '<f8', 'fortran_order': False, 'shape': ({n_rows}, {ROW_WIDTH}), }}"
    # magic(6) + version(2) + length(2) + text + '\n' padded to the alignment
    unpadded = len(NPY_MAGIC) + len(NPY_VERSION) + 2 + len(text) + 1
    text += " " * (-unpadded % NPY_ALIGN) + "\n"
    encoded = text.encode("latin1")
    return NPY_MAGIC + NPY_VERSION + struct.pack("<H", len(encoded)) + encoded


def write_npy(table: PoseBoundsTable, sink: BinaryIO) -> int:
    header = _npy_header(len(table))
    data = table.rows.astype("<f8", copy=False).tobytes(order="C")
    sink.write(header)
    sink.write(data)
    return len(header) + len(data)


def npy_bytes(table: PoseBoundsTable) -> bytes:
    buf = io.BytesIO()
    write_npy(table, buf)
    return buf.getvalue()


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise TruncatedDataError(f"truncated {what}: expected {n} bytes, got {len(data)}")
    return data


def read_npy(source: BinaryIO) -> PoseBoundsTable:
    magic = source.read(len(NPY_MAGIC))
    if magic != NPY_MAGIC:
        raise FormatError(f"not an NPY stream (magic {magic!r})")
    version = _read_exact(source, 2, "version")
    if version != NPY_VERSION:
        raise UnsupportedLayoutError("version", tuple(version))
    (hlen,) = struct.unpack("<H", _read_exact(source, 2, "header length"))
    raw = _read_exact(source, hlen, "header")
    try:
        header = ast.literal_eval(raw.decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"unparseable NPY header: {raw!r}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"NPY header must hold descr/fortran_order/shape, got {header!r}")
    if header["descr"] != "<f8":
        raise UnsupportedLayoutError("descr", header["descr"])
    if header["fortran_order"] is not False:
        raise UnsupportedLayoutError("fortran_order", header["fortran_order"])
    shape = header["shape"]
    if (
        not isinstance(shape, tuple)
        or len(shape) != 2
        or shape[1] != ROW_WIDTH
        or not isinstance(shape[0], int)
        or shape[0] < 1
    ):
        raise UnsupportedLayoutError("shape", shape)
    n_bytes = shape[0] * ROW_WIDTH * 8
    data = _read_exact(source, n_bytes, "data block")
    return PoseBoundsTable(np.frombuffer(data, dtype="<f8").reshape(shape))


def load_table(path) -> PoseBoundsTable:
    with open(path, "rb") as fh:
        return read_npy(fh)


def save_table(table: PoseBoundsTable, path) -> int:
    with open(path, "wb") as fh:
        return write_npy(table, fh)


def table_from_bytes(data: bytes) -> PoseBoundsTable:
    return read_npy(io.BytesIO(data))


# -- images -----------------------------------------------------------------


def encode_png(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise ValidationError(f"PNG pixels must be uint8, got {pixels.dtype}")
    mode = {2: "L", 3: "RGB"}.get(pixels.ndim)
    if mode is None or (pixels.ndim == 3 and pixels.shape[2] != 3):
        raise ValidationError(f"unsupported image shape {pixels.shape}")
    buf = io.BytesIO()
    Image.fromarray(pixels, mode=mode).save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return np.array(img)


# -- dataset archive --------------------------------------------------------


def frame_name(index: int) -> str:
    return f"{index:04d}{IMAGE_EXT}"


def format_manifest(entries: dict[str, str]) -> bytes:
    lines = []
    for key in sorted(entries):
        value = str(entries[key])
        if "=" in key or "\n" in key or "\n" in value:
            raise ValidationError(f"manifest entry cannot be serialized: {key!r}")
        lines.append(f"{key}={value}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_manifest(data: bytes) -> dict[str, str]:
    entries: dict[str, str] = {}
    for n, line in enumerate(data.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"manifest line {n} is not key=value: {line!r}")
        key, value = line.split("=", 1)
        entries[key] = value
    return entries


@dataclass(eq=False)
class DatasetArchive:
    """Images, optional masks and the two N x 17 tables of one capture."""

    images: list[np.ndarray]
    poses_bounds: PoseBoundsTable
    compensation: PoseBoundsTable
    intrinsics: CameraIntrinsics
    masks: list[np.ndarray] | None = None
    preprocessed: bool = False
    metadata: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.images)

    def manifest(self) -> dict[str, str]:
        entries = {
            "frames": str(len(self.images)),
            "height": repr(float(self.intrinsics.h)),
            "width": repr(float(self.intrinsics.w)),
            "focal": repr(float(self.intrinsics.f)),
            "preprocessed": "true" if self.preprocessed else "false",
            "image_ext": IMAGE_EXT,
        }
        for key, value in self.metadata.items():
            entries.setdefault(key, value)
        return entries

    def validate(self) -> None:
        n = len(self.images)
        problems = []
        if n == 0:
            problems.append("no images")
        if len(self.poses_bounds) != n:
            problems.append(f"poses_bounds has {len(self.poses_bounds)} rows for {n} images")
        if len(self.compensation) != n:
            problems.append(f"compensation has {len(self.compensation)} rows for {n} images")
        if self.masks is not None and len(self.masks) != n:
            problems.append(f"{len(self.masks)} masks for {n} images")
        if problems:
            raise ValidationError("inconsistent dataset archive", problems)
        if self.preprocessed and self.masks is None:
            raise ValidationError("preprocessed archive is missing members", [f"{MASK_DIR}/"])

    def with_updates(self, **changes) -> DatasetArchive:
        return replace(self, **changes)


def _zip_member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=FIXED_ZIP_TIME)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    info.create_system = 3
    zf.writestr(info, data)


def pack_dataset(archive: DatasetArchive, sink: BinaryIO) -> int:
    archive.validate()
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _zip_member(zf, MANIFEST_NAME, format_manifest(archive.manifest()))
        _zip_member(zf, POSES_NAME, npy_bytes(archive.poses_bounds))
        _zip_member(zf, COMPENSATION_NAME, npy_bytes(archive.compensation))
        for i, img in enumerate(archive.images):
            _zip_member(zf, f"{IMAGE_DIR}/{frame_name(i)}", encode_png(img))
        for i, mask in enumerate(archive.masks or []):
            _zip_member(zf, f"{MASK_DIR}/{frame_name(i)}", encode_png(mask))
    data = buf.getvalue()
    sink.write(data)
    return len(data)


def dataset_bytes(archive: DatasetArchive) -> bytes:
    buf = io.BytesIO()
    pack_dataset(archive, buf)
    return buf.getvalue()


def _frame_members(names: list[str], directory: str) -> list[str]:
    prefix = directory + "/"
    members = sorted(n for n in names if n.startswith(prefix) and n != prefix)
    indices, exts = [], set()
    for name in members:
        match = _FRAME_NAME.match(name[len(prefix):])
        if not match:
            raise ValidationError(f"bad frame filename {name!r}")
        indices.append(int(match.group(1)))
        exts.add(match.group(2))
    if len(exts) > 1:
        raise ValidationError(f"mixed extensions under {prefix}: {sorted(exts)}")
    missing = [f"{prefix}{frame_name(i)}" for i in range(len(members)) if i not in set(indices)]
    if missing:
        raise ValidationError("frame indices are not contiguous", missing)
    return sorted(members, key=lambda n: int(_FRAME_NAME.match(n[len(prefix):]).group(1)))


def unpack_dataset(source: BinaryIO) -> DatasetArchive:
    try:
        zf = zipfile.ZipFile(source)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"dataset is not a ZIP archive: {exc}") from exc
    with zf:
        names = zf.namelist()
        missing = [n for n in (MANIFEST_NAME, POSES_NAME, COMPENSATION_NAME) if n not in names]
        image_names = _frame_members(names, IMAGE_DIR)
        if not image_names:
            missing.append(f"{IMAGE_DIR}/")
        if missing:
            raise ValidationError("dataset archive is missing members", missing)
        manifest = parse_manifest(zf.read(MANIFEST_NAME))
        mask_names = _frame_members(names, MASK_DIR)
        preprocessed = manifest.get("preprocessed", "false") == "true"
        if preprocessed and not mask_names:
            raise ValidationError("preprocessed archive is missing members", [f"{MASK_DIR}/"])
        try:
            intrinsics = CameraIntrinsics(
                float(manifest["height"]), float(manifest["width"]), float(manifest["focal"])
            )
            frames = int(manifest["frames"])
        except KeyError as exc:
            raise ValidationError("manifest is missing keys", [str(exc.args[0])]) from exc
        if frames != len(image_names):
            raise ValidationError(f"manifest declares {frames} frames, archive holds {len(image_names)}")
        if mask_names and len(mask_names) != len(image_names):
            expected = {f"{MASK_DIR}/{frame_name(i)}" for i in range(len(image_names))}
            raise ValidationError("mask count does not match image count", sorted(expected - set(mask_names)))
        reserved = {"frames", "height", "width", "focal", "preprocessed", "image_ext"}
        archive = DatasetArchive(
            images=[decode_png(zf.read(n)) for n in image_names],
            poses_bounds=table_from_bytes(zf.read(POSES_NAME)),
            compensation=table_from_bytes(zf.read(COMPENSATION_NAME)),
            intrinsics=intrinsics,
            masks=[decode_png(zf.read(n)) for n in mask_names] or None,
            preprocessed=preprocessed,
            metadata={k: v for k, v in manifest.items() if k not in reserved},
        )
    archive.validate()
    return archive


def dataset_from_bytes(data: bytes) -> DatasetArchive:
    return unpack_dataset(io.BytesIO(data))
