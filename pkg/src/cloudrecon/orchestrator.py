"""Staged pipeline runs over the object store.

A run moves a dataset through ``ingest -> preprocess -> reconstruct``. Each
:meth:`Scheduler.step` advances one stage; the run record is rewritten to the
store after every transition so a crashed process can be resumed from it.
Stage outputs are recorded with their SHA-256 digests and re-verified on
resume, which is what lets a restart skip stages that already succeeded.
"""

from __future__ import annotations

import io
import json
import logging
import math
import time
import uuid
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .codec import dataset_bytes, dataset_from_bytes, decode_png, encode_png
from .errors import NotFoundError, NotReadyError, ValidationError
from .preprocess import PreprocessConfig, preprocess_archive
from .reconstruct import ARTIFACT_NAMES, ReconstructConfig, reconstruct_archive
from .store import ObjectStore, sha256_hex

log = logging.getLogger(__name__)

STAGES = ("ingest", "preprocess", "reconstruct")
PENDING, RUNNING, SUCCEEDED, FAILED = "Pending", "Running", "Succeeded", "Failed"
DEFAULT_RETRIES = 1

DATASETS = "datasets"
PIPELINE = "pipeline"
DATASET_NAME = "dataset.zip"
GRID_NAME = "occupancy.npy"
MANIFEST_NAME = "manifest.json"
TILE = 512


def run_key(run_id: str) -> str:
    return f"runs/{run_id}.json"


def output_key(run_id: str, stage: str, name: str) -> str:
    return f"outputs/{run_id}/{stage}/{name}"


def preview_key(run_id: str, stage: str) -> str:
    return f"previews/{run_id}/{stage}.png"


@dataclass
class PipelineConfig:
    tau: float = PreprocessConfig.tau
    resolution: int = ReconstructConfig.resolution
    half_extent: float = ReconstructConfig.half_extent


@dataclass
class StageRecord:
    name: str
    state: str = PENDING
    attempts: int = 0
    retries_left: int = DEFAULT_RETRIES
    outputs: dict[str, dict[str, str]] = field(default_factory=dict)
    error: str | None = None
    started: float | None = None
    finished: float | None = None


@dataclass
class PipelineRun:
    run_id: str
    dataset_key: str
    config: PipelineConfig
    stages: list[StageRecord]
    history: list[dict] = field(default_factory=list)
    created: float = 0.0

    def stage(self, name: str) -> StageRecord:
        for s in self.stages:
            if s.name == name:
                return s
        raise NotFoundError(f"unknown stage {name!r}")

    @property
    def states(self) -> list[str]:
        return [s.state for s in self.stages]

    @property
    def succeeded(self) -> bool:
        return all(s.state == SUCCEEDED for s in self.stages)

    @property
    def failed_stage(self) -> StageRecord | None:
        return next((s for s in self.stages if s.state == FAILED), None)

    @property
    def terminal(self) -> bool:
        return self.succeeded or self.failed_stage is not None

    def to_json(self) -> bytes:
        return json.dumps(asdict(self), indent=2, sort_keys=True).encode() + b"\n"

    @classmethod
    def from_json(cls, data: bytes) -> PipelineRun:
        raw = json.loads(data)
        return cls(
            run_id=raw["run_id"],
            dataset_key=raw["dataset_key"],
            config=PipelineConfig(**raw["config"]),
            stages=[StageRecord(**s) for s in raw["stages"]],
            history=list(raw["history"]),
            created=raw["created"],
        )


@dataclass
class StageContext:
    store: ObjectStore
    run: PipelineRun
    stage: str

    def output(self, stage: str, name: str) -> bytes:
        return self.store.get(PIPELINE, output_key(self.run.run_id, stage, name))


Executor = Callable[[StageContext], dict[str, bytes]]


def ingest_stage(ctx: StageContext) -> dict[str, bytes]:
    # unpacking validates the archive; repacking makes the stored copy canonical
    archive = dataset_from_bytes(ctx.store.get(DATASETS, ctx.run.dataset_key))
    return {DATASET_NAME: dataset_bytes(archive)}


def preprocess_stage(ctx: StageContext) -> dict[str, bytes]:
    archive = dataset_from_bytes(ctx.output("ingest", DATASET_NAME))
    out = preprocess_archive(archive, PreprocessConfig(tau=ctx.run.config.tau))
    return {DATASET_NAME: dataset_bytes(out)}


def reconstruct_stage(ctx: StageContext) -> dict[str, bytes]:
    archive = dataset_from_bytes(ctx.output("preprocess", DATASET_NAME))
    cfg = ctx.run.config
    result = reconstruct_archive(archive, ReconstructConfig(cfg.resolution, cfg.half_extent))
    outputs = result.artifacts()
    buf = io.BytesIO()
    np.save(buf, result.grid.occupied.astype(np.uint8), allow_pickle=False)
    outputs[GRID_NAME] = buf.getvalue()
    manifest = {name: output_key(ctx.run.run_id, "reconstruct", name) for name in ARTIFACT_NAMES}
    outputs[MANIFEST_NAME] = json.dumps(manifest, indent=2).encode() + b"\n"
    return outputs


DEFAULT_EXECUTORS: dict[str, Executor] = {
    "ingest": ingest_stage,
    "preprocess": preprocess_stage,
    "reconstruct": reconstruct_stage,
}


# -- previews ---------------------------------------------------------------------


def mask_montage(masks: list[np.ndarray], tile: int = TILE) -> np.ndarray:
    cols = math.ceil(math.sqrt(len(masks)))
    rows = math.ceil(len(masks) / cols)
    canvas = np.zeros((rows * tile, cols * tile), dtype=np.uint8)
    for i, mask in enumerate(masks):
        r, c = divmod(i, cols)
        canvas[r * tile : (r + 1) * tile, c * tile : (c + 1) * tile] = mask[:tile, :tile]
    return canvas


def _preview_image(ctx: StageContext, stage: str) -> np.ndarray:
    try:
        if stage == "ingest":
            return dataset_from_bytes(ctx.output("ingest", DATASET_NAME)).images[0]
        if stage == "preprocess":
            masks = dataset_from_bytes(ctx.output("preprocess", DATASET_NAME)).masks
            if not masks:
                raise NotReadyError("preprocess output has no masks")
            return mask_montage(masks)
        if stage == "reconstruct":
            grid = np.load(io.BytesIO(ctx.output("reconstruct", GRID_NAME)), allow_pickle=False)
            # slice through the middle along y, z rows flipped so +z is up
            return (grid[:, grid.shape[1] // 2, ::-1].T * 255).astype(np.uint8)
    except NotFoundError as exc:
        raise NotReadyError(f"stage {stage} has no previewable output yet") from exc
    raise NotFoundError(f"unknown stage {stage!r}")


# -- scheduler --------------------------------------------------------------------


class Scheduler:
    def __init__(
        self,
        store: ObjectStore,
        executors: dict[str, Executor] | None = None,
        retries: int = DEFAULT_RETRIES,
        clock: Callable[[], float] = time.time,
    ) -> None:
        if retries < 0:
            raise ValidationError(f"retry budget must be >= 0, got {retries}")
        self.store = store
        self.executors = {**DEFAULT_EXECUTORS, **(executors or {})}
        self.retries = retries
        self.clock = clock

    def save(self, run: PipelineRun) -> None:
        self.store.put(PIPELINE, run_key(run.run_id), run.to_json())

    def submit(self, dataset_key: str, config: PipelineConfig | None = None, run_id: str | None = None) -> PipelineRun:
        if not self.store.exists(DATASETS, dataset_key):
            raise NotFoundError(f"dataset {dataset_key!r} not found")
        run_id = run_id or uuid.uuid4().hex[:12]
        if self.store.exists(PIPELINE, run_key(run_id)):
            raise ValidationError(f"run {run_id!r} already exists")
        run = PipelineRun(
            run_id=run_id,
            dataset_key=dataset_key,
            config=config or PipelineConfig(),
            stages=[StageRecord(name, retries_left=self.retries) for name in STAGES],
            created=self.clock(),
        )
        self.save(run)
        return run

    def load(self, run_id: str) -> PipelineRun:
        """Read a run back and repair it after a crash.

        A stage left Running was interrupted and goes back to Pending. A
        Succeeded stage whose outputs are missing or altered is reset along
        with every stage after it.
        """
        run = PipelineRun.from_json(self.store.get(PIPELINE, run_key(run_id)))
        changed = False
        for i, stage in enumerate(run.stages):
            if stage.state == RUNNING:
                self._transition(run, stage, PENDING, note="interrupted")
                changed = True
            elif stage.state == SUCCEEDED and not self._outputs_intact(stage):
                for later in run.stages[i:]:
                    if later.state != PENDING:
                        self._transition(run, later, PENDING, note="output digest mismatch")
                        later.outputs = {}
                changed = True
                break
        if changed:
            self.save(run)
        return run

    def list_runs(self) -> list[str]:
        return [k[len("runs/") : -len(".json")] for k in self.store.list(PIPELINE, "runs/")]

    def _outputs_intact(self, stage: StageRecord) -> bool:
        for entry in stage.outputs.values():
            try:
                if self.store.digest(PIPELINE, entry["key"]) != entry["sha256"]:
                    return False
            except NotFoundError:
                return False
        return bool(stage.outputs)

    def _transition(self, run: PipelineRun, stage: StageRecord, state: str, note: str | None = None) -> None:
        entry = {"stage": stage.name, "from": stage.state, "to": state, "attempt": stage.attempts, "at": self.clock()}
        if note:
            entry["note"] = note
        run.history.append(entry)
        stage.state = state

    def next_stage(self, run: PipelineRun) -> StageRecord | None:
        for i, stage in enumerate(run.stages):
            if stage.state == SUCCEEDED:
                continue
            if stage.state == PENDING and all(s.state == SUCCEEDED for s in run.stages[:i]):
                return stage
            return None
        return None

    def step(self, run: PipelineRun) -> PipelineRun:
        """Advance one stage; stage errors are recorded, never raised."""
        if run.terminal:
            return run
        stage = self.next_stage(run)
        if stage is None:
            return run
        stage.attempts += 1
        stage.started = self.clock()
        stage.error = None
        self._transition(run, stage, RUNNING)
        self.save(run)
        ctx = StageContext(self.store, run, stage.name)
        try:
            outputs = self.executors[stage.name](ctx)
            stage.outputs = {
                name: {"key": (key := output_key(run.run_id, stage.name, name)), "sha256": self.store.put(PIPELINE, key, data)}
                for name, data in outputs.items()
            }
        except Exception as exc:  # the state machine owns every stage failure
            stage.error = f"{type(exc).__name__}: {exc}"
            stage.finished = self.clock()
            log.warning("[%s] attempt %d failed: %s", stage.name, stage.attempts, stage.error)
            if stage.retries_left > 0:
                stage.retries_left -= 1
                self._transition(run, stage, PENDING, note="retry")
            else:
                self._transition(run, stage, FAILED)
            self.save(run)
            return run
        stage.finished = self.clock()
        self._transition(run, stage, SUCCEEDED)
        self.save(run)
        try:
            self.emit_preview(run, stage.name)
        except Exception as exc:  # a missing preview never fails the stage
            log.warning("[%s] preview failed: %s", stage.name, exc)
        return run

    def run_to_completion(self, run: PipelineRun, stop_after: str | None = None) -> PipelineRun:
        if stop_after is not None and stop_after not in STAGES:
            raise ValidationError(f"unknown stage {stop_after!r}")
        while not run.terminal:
            if stop_after and run.stage(stop_after).state == SUCCEEDED:
                break
            before = len(run.history)
            self.step(run)
            if len(run.history) == before:
                break
        return run

    def emit_preview(self, run: PipelineRun, stage: str) -> str:
        image = _preview_image(StageContext(self.store, run, stage), stage)
        key = preview_key(run.run_id, stage)
        self.store.put(PIPELINE, key, encode_png(image))
        return key

    def preview(self, run_id: str, stage: str) -> np.ndarray:
        return decode_png(self.store.get(PIPELINE, preview_key(run_id, stage)))

    def artifacts(self, run: PipelineRun) -> dict[str, bytes]:
        stage = run.stage("reconstruct")
        if stage.state != SUCCEEDED:
            raise NotReadyError("reconstruct has not succeeded")
        return {name: self.store.get(PIPELINE, stage.outputs[name]["key"]) for name in ARTIFACT_NAMES}

    def artifact_digests(self, run: PipelineRun) -> dict[str, str]:
        return {name: sha256_hex(data) for name, data in self.artifacts(run).items()}
