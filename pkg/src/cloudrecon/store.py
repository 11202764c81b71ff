"""Filesystem-backed object store with bucket/key semantics.

Each object is a file at ``root/bucket/key``. Writes go to a temporary file in
the destination directory and are moved into place with ``os.replace``, so a
reader sees either the old or the new content, never a partial write.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import threading
from pathlib import Path, PurePosixPath

from .errors import InvalidInputError, NotFoundError

_TMP_PREFIX = ".tmp-"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _check_name(kind: str, name: str) -> PurePosixPath:
    path = PurePosixPath(name)
    if not name or path.is_absolute() or any(p in ("", ".", "..") for p in name.split("/")):
        raise InvalidInputError(f"invalid {kind} {name!r}")
    if any(part.startswith(_TMP_PREFIX) for part in path.parts):
        raise InvalidInputError(f"{kind} {name!r} uses the reserved prefix {_TMP_PREFIX!r}")
    return path


class ObjectStore:
    def __init__(self, root) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[tuple[str, str], threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _path(self, bucket: str, key: str) -> Path:
        if "/" in bucket:
            raise InvalidInputError(f"invalid bucket {bucket!r}")
        _check_name("bucket", bucket)
        return self.root / bucket / _check_name("key", key)

    def _lock(self, bucket: str, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault((bucket, key), threading.Lock())

    def put(self, bucket: str, key: str, data: bytes) -> str:
        """Store ``data`` atomically and return its SHA-256 digest."""
        path = self._path(bucket, key)
        data = bytes(data)
        with self._lock(bucket, key):
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=_TMP_PREFIX, dir=path.parent)
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, path)
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise
        return sha256_hex(data)

    def get(self, bucket: str, key: str) -> bytes:
        path = self._path(bucket, key)
        try:
            return path.read_bytes()
        except (FileNotFoundError, IsADirectoryError, NotADirectoryError):
            raise NotFoundError(f"{bucket}/{key} not found") from None

    def exists(self, bucket: str, key: str) -> bool:
        return self._path(bucket, key).is_file()

    def digest(self, bucket: str, key: str) -> str:
        return sha256_hex(self.get(bucket, key))

    def delete(self, bucket: str, key: str) -> None:
        path = self._path(bucket, key)
        with self._lock(bucket, key):
            try:
                path.unlink()
            except FileNotFoundError:
                raise NotFoundError(f"{bucket}/{key} not found") from None

    def list(self, bucket: str, prefix: str = "") -> list[str]:
        """Keys in ``bucket`` starting with ``prefix``, in lexicographic order."""
        base = self.root / _check_name("bucket", bucket)
        if not base.is_dir():
            return []
        keys = []
        for dirpath, dirnames, filenames in os.walk(base):
            dirnames[:] = [d for d in dirnames if not d.startswith(_TMP_PREFIX)]
            rel = Path(dirpath).relative_to(base).as_posix()
            for name in filenames:
                if name.startswith(_TMP_PREFIX):
                    continue
                key = name if rel == "." else f"{rel}/{name}"
                if key.startswith(prefix):
                    keys.append(key)
        return sorted(keys)
