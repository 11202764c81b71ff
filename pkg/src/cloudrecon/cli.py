"""Command-line entry point: ``cloudrecon <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import capture
from .alignment import align_tables, difference_matrix
from .codec import NPY_MAGIC, PoseBoundsTable, dataset_bytes, dataset_from_bytes, table_from_bytes
from .errors import NotFoundError, ReconError
from .latency import LatencyReport, latency_total
from .orchestrator import DATASETS, PIPELINE, STAGES, PipelineConfig, Scheduler
from .posecore import RigidTransform, parse_pose_row, undo_rotational_fix
from .preprocess import PreprocessConfig, preprocess_archive
from .reconstruct import ReconstructConfig, export_artifacts, reconstruct_archive
from .store import ObjectStore

log = logging.getLogger("cloudrecon")

DEFAULT_STORE = "cloudrecon-store"


class CommandError(Exception):
    def __init__(self, stage: str, message: str) -> None:
        super().__init__(message)
        self.stage = stage


def _store(args) -> ObjectStore:
    return ObjectStore(args.store)


def _read_source(args, ref: str) -> bytes:
    """A filesystem path, ``bucket:key``, or a key in the datasets bucket."""
    if os.path.isfile(ref):
        return Path(ref).read_bytes()
    bucket, key = ref.split(":", 1) if ":" in ref else (DATASETS, ref)
    return _store(args).get(bucket, key)


def _read_table(args, ref: str, compensation: bool = False) -> PoseBoundsTable:
    data = _read_source(args, ref)
    if data.startswith(NPY_MAGIC):
        return table_from_bytes(data)
    archive = dataset_from_bytes(data)
    return archive.compensation if compensation else archive.poses_bounds


# -- subcommands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    events = [capture.parse_drift(spec) for spec in args.drift]
    config = capture.SynthConfig(
        frames=args.frames,
        orbit_radius=args.radius,
        height=args.height,
        shape=capture.parse_shape(args.shape),
        image_size=args.image_size,
        focal=args.focal,
        anchors=args.anchors,
        events=events,
        random_jumps=args.random_jumps,
        anchor_noise=args.anchor_noise,
        seed=args.seed,
    )
    session = capture.simulate_capture(config)
    data = capture.export_raw(session) if args.raw else dataset_bytes(capture.export_session(session))
    digest = _store(args).put(DATASETS, args.out, data)
    print(f"{DATASETS}:{args.out} sha256={digest}")
    return 0


def cmd_compensate(args) -> int:
    archive = capture.replay_raw(_read_source(args, args.input))
    digest = _store(args).put(DATASETS, args.out, dataset_bytes(archive))
    print(f"{DATASETS}:{args.out} sha256={digest}")
    return 0


def cmd_preprocess(args) -> int:
    archive = dataset_from_bytes(_read_source(args, args.input))
    out = preprocess_archive(archive, PreprocessConfig(tau=args.tau))
    digest = _store(args).put(DATASETS, args.out, dataset_bytes(out))
    print(f"{DATASETS}:{args.out} sha256={digest}")
    return 0


def cmd_reconstruct(args) -> int:
    archive = dataset_from_bytes(_read_source(args, args.input))
    result = reconstruct_archive(archive, ReconstructConfig(args.resolution, args.half_extent))
    manifest = export_artifacts(result.mesh, result.textures, args.out_dir)
    for path in manifest.paths:
        print(path)
    return 0


def cmd_run(args) -> int:
    sched = Scheduler(_store(args), retries=args.retries)
    if args.resume:
        run = sched.load(args.resume)
    elif args.input:
        config = PipelineConfig(args.tau, args.resolution, args.half_extent)
        run = sched.submit(args.input, config, run_id=args.run_id)
    else:
        raise CommandError("run", "give a dataset key or --resume RUN_ID")
    print(f"run {run.run_id}")
    run = sched.run_to_completion(run, stop_after=args.stop_after)
    for stage in run.stages:
        print(f"  {stage.name:<12} {stage.state:<10} attempts={stage.attempts}")
    failed = run.failed_stage
    if failed is not None:
        raise CommandError(failed.name, failed.error or "failed")
    if run.succeeded and args.export:
        out = Path(args.export)
        out.mkdir(parents=True, exist_ok=True)
        for name, data in sched.artifacts(run).items():
            (out / name).write_bytes(data)
            print(out / name)
    return 0


def _format_row(i: int, row: np.ndarray) -> str:
    view, k, b = parse_pose_row(row)
    pose = RigidTransform(undo_rotational_fix(view[:, :3]), view[:, 3])
    q = pose.quaternion
    t = pose.translation
    return (
        f"{i:4d}  t=({t[0]:+.4f}, {t[1]:+.4f}, {t[2]:+.4f})  "
        f"q=({q.a:+.5f}, {q.b:+.5f}, {q.c:+.5f}, {q.d:+.5f})  "
        f"hwf=({k.h:g}, {k.w:g}, {k.f:g})  bounds=({b.m:.4f}, {b.M:.4f})"
    )


def cmd_inspect(args) -> int:
    table = _read_table(args, args.source, args.compensation)
    print(f"{len(table)} rows")
    for i, row in enumerate(table.rows):
        if args.compensation:
            print(f"{i:4d}  " + " ".join(f"{v:+.6f}" for v in row))
        else:
            print(_format_row(i, row))
    return 0


def cmd_align(args) -> int:
    table = _read_table(args, args.table)
    aligned, alignment = align_tables(table, _read_table(args, args.reference))
    diff = difference_matrix(table, aligned)
    text = diff.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("alignment method=%s scale=%.6g norm=%.6g", alignment.method, alignment.scale, diff.norm)
    return 0


def cmd_latency(args) -> int:
    report = LatencyReport(args.scan, args.upload, args.download, args.signal, args.preprocessing, args.reconstruction)
    print(f"{latency_total(report, simplified=args.simplified):g}")
    return 0


def cmd_list(args) -> int:
    for key in _store(args).list(args.bucket, args.prefix):
        print(key)
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudrecon", description="Scan-to-mesh pipeline tools.")
    parser.add_argument("--store", default=os.environ.get("CLOUDRECON_STORE", DEFAULT_STORE), help="object store root directory")
    parser.add_argument("--retries", type=int, default=1, help="retry budget per pipeline stage")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic capture session into the store")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--radius", type=float, default=2.0, help="orbit radius (m)")
    p.add_argument("--height", type=float, default=0.0, help="orbit height above the target (m)")
    p.add_argument("--shape", default="sphere:0.35", help="sphere:R or box:HX,HY,HZ")
    p.add_argument("--drift", action="append", default=[], metavar="FRAME:TX,TY,TZ[:AX,AY,AZ,DEG]")
    p.add_argument("--random-jumps", type=int, default=0)
    p.add_argument("--anchors", type=int, default=4)
    p.add_argument("--anchor-noise", type=float, default=0.0)
    p.add_argument("--image-size", type=int, default=512)
    p.add_argument("--focal", type=float, default=700.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw", action="store_true", help="store the uncompensated recording instead")
    p.add_argument("--out", required=True, help="dataset key")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compensate", help="replay a raw recording into a compensated dataset")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("preprocess", help="crop, resize and mask a dataset")
    p.add_argument("input")
    p.add_argument("--tau", type=float, default=PreprocessConfig.tau)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("reconstruct", help="carve and mesh a preprocessed dataset")
    p.add_argument("input")
    p.add_argument("--resolution", type=int, default=ReconstructConfig.resolution)
    p.add_argument("--half-extent", type=float, default=ReconstructConfig.half_extent, help="grid is [-E, E]^3")
    p.add_argument("--out-dir", default="artifacts")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("run", help="run the staged pipeline end to end")
    p.add_argument("input", nargs="?", help="dataset key")
    p.add_argument("--tau", type=float, default=PreprocessConfig.tau)
    p.add_argument("--resolution", type=int, default=ReconstructConfig.resolution)
    p.add_argument("--half-extent", type=float, default=ReconstructConfig.half_extent)
    p.add_argument("--run-id")
    p.add_argument("--resume", metavar="RUN_ID")
    p.add_argument("--stop-after", choices=STAGES)
    p.add_argument("--export", metavar="DIR", help="copy the artifacts here on success")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("inspect", help="pretty-print a poses_bounds table")
    p.add_argument("source", help="dataset key, bucket:key, .npy or .zip path")
    p.add_argument("--compensation", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("align", help="difference matrix of a table against an aligned reference")
    p.add_argument("table")
    p.add_argument("reference")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("latency", help="end-to-end latency from phase times (seconds)")
    for name in ("scan", "upload", "download", "signal", "preprocessing", "reconstruction"):
        p.add_argument(f"--{name}", type=float, default=0.0)
    p.add_argument("--simplified", action="store_true")
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("ls", help="list store keys")
    p.add_argument("bucket", nargs="?", default=PIPELINE)
    p.add_argument("prefix", nargs="?", default="")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"cloudrecon: [{exc.stage}] {exc}", file=sys.stderr)
    except NotFoundError as exc:
        print(f"cloudrecon: [{args.command}] not found: {exc}", file=sys.stderr)
    except (ReconError, ValueError, OSError) as exc:
        print(f"cloudrecon: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
