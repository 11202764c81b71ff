"""End-to-end latency accounting for one scan-to-model request."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import ValidationError


@dataclass(frozen=True)
class LatencyReport:
    """Phase durations in seconds.

    Upload and signal are per-hop times; each occurs twice per request, so
    the full total counts them double. Fields are raw inputs, not measured.
    """

    t_scan: float = 0.0
    t_upload: float = 0.0
    t_download: float = 0.0
    t_signal: float = 0.0
    t_preprocessing: float = 0.0
    t_reconstruction: float = 0.0

    def __post_init__(self) -> None:
        bad = [name for name, value in asdict(self).items() if not value >= 0]
        if bad:
            raise ValidationError("latency fields must be non-negative", bad)


def latency_total(report: LatencyReport, simplified: bool = False) -> float:
    r = report
    if simplified:
        return r.t_scan + r.t_preprocessing + r.t_reconstruction
    return r.t_scan + 2 * r.t_upload + 2 * r.t_signal + r.t_preprocessing + r.t_reconstruction + r.t_download
