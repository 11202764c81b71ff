"""Exception types shared across the pipeline."""

from __future__ import annotations


class ReconError(Exception):
    """Base class for every error raised by cloudrecon."""


class InvalidInputError(ReconError, ValueError):
    """A value violates an operation's precondition."""


class InvalidParameterError(InvalidInputError):
    """A tunable parameter is out of its allowed range."""


class FormatError(ReconError, ValueError):
    """A byte stream is not in the expected container format."""


class UnsupportedLayoutError(FormatError):
    """An NPY header is well formed but describes a layout we do not read."""

    def __init__(self, field: str, value: object) -> None:
        super().__init__(f"unsupported {field}: {value!r}")
        self.field = field
        self.value = value


class TruncatedDataError(ReconError, OSError):
    """A stream ended before the declared payload was read."""


class ValidationError(ReconError, ValueError):
    """A composite object (archive, table pair, grid) is inconsistent."""

    def __init__(self, message: str, missing: list[str] | None = None) -> None:
        if missing:
            message = f"{message}: {', '.join(missing)}"
        super().__init__(message)
        self.missing = list(missing or [])


class ConflictError(ReconError):
    """An identifier is already in use."""


class EmptySessionError(ReconError):
    """A recording session was finalized without frames."""


class DegenerateError(ReconError, ValueError):
    """Geometry is too degenerate for the requested solve."""


class VisibilityError(ReconError):
    """The scene is not visible from a camera."""

    def __init__(self, message: str, frame: int | None = None) -> None:
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


class NothingToExtractError(ReconError):
    """An occupancy grid has no inside/outside boundary."""


class NotFoundError(ReconError, KeyError):
    """A store key or run does not exist."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "not found"


class NotReadyError(ReconError):
    """A stage has not produced enough output to act on."""


class StageError(ReconError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class VisibilityWarning(UserWarning):
    """The scene falls outside a camera's frustum."""


class NoValidAnchorsWarning(UserWarning):
    """A frame had no tracked anchor and passed through uncompensated."""


class LowConfidenceMaskWarning(UserWarning):
    """The image border is not uniform enough to trust the background estimate."""
