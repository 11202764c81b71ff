from __future__ import annotations

import json

import pytest

from cloudrecon.cli import main
from cloudrecon.codec import dataset_from_bytes, npy_bytes
from cloudrecon.orchestrator import DATASETS, PIPELINE, SUCCEEDED, run_key
from cloudrecon.store import ObjectStore


@pytest.fixture
def store_root(tmp_path):
    return str(tmp_path / "store")


def cli(store_root, *argv):
    return main(["--store", store_root, *argv])


SYNTH = ("synth", "--frames", "6", "--image-size", "128", "--focal", "175", "--random-jumps", "2", "--seed", "2")


def test_synth_run_and_resume(store_root, tmp_path, capsys):
    assert cli(store_root, *SYNTH, "--out", "scan.zip") == 0
    assert cli(store_root, "run", "scan.zip", "--run-id", "r1", "--resolution", "24", "--stop-after", "preprocess") == 0
    store = ObjectStore(store_root)
    record = json.loads(store.get(PIPELINE, run_key("r1")))
    assert [s["state"] for s in record["stages"]] == [SUCCEEDED, SUCCEEDED, "Pending"]
    assert cli(store_root, "run", "--resume", "r1", "--export", str(tmp_path / "out")) == 0
    record = json.loads(store.get(PIPELINE, run_key("r1")))
    assert [s["attempts"] for s in record["stages"]] == [1, 1, 1]
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == sorted(
        ["mesh.obj", "mesh.mtl", "texture_kd.png", "texture_ks.png", "texture_n.png"]
    )
    out = capsys.readouterr().out
    assert "reconstruct  Succeeded" in out


def test_raw_compensate_matches_direct(store_root):
    assert cli(store_root, *SYNTH, "--out", "direct.zip") == 0
    assert cli(store_root, *SYNTH, "--raw", "--out", "raw.zip") == 0
    assert cli(store_root, "compensate", "raw.zip", "--out", "replayed.zip") == 0
    store = ObjectStore(store_root)
    a = dataset_from_bytes(store.get(DATASETS, "direct.zip"))
    b = dataset_from_bytes(store.get(DATASETS, "replayed.zip"))
    assert npy_bytes(a.poses_bounds) == npy_bytes(b.poses_bounds)


def test_preprocess_reconstruct_subcommands(store_root, tmp_path, capsys):
    cli(store_root, *SYNTH, "--out", "scan.zip")
    assert cli(store_root, "preprocess", "scan.zip", "--tau", "0.4", "--out", "pre.zip") == 0
    pre = dataset_from_bytes(ObjectStore(store_root).get(DATASETS, "pre.zip"))
    assert pre.preprocessed and pre.metadata["mask_threshold"] == "0.4"
    out_dir = tmp_path / "mesh"
    assert cli(store_root, "reconstruct", "pre.zip", "--resolution", "20", "--out-dir", str(out_dir)) == 0
    assert (out_dir / "mesh.obj").stat().st_size > 0
    # reconstruct refuses an archive without masks, naming the subcommand
    assert cli(store_root, "reconstruct", "scan.zip", "--out-dir", str(out_dir)) == 1
    assert "[reconstruct]" in capsys.readouterr().err


def test_inspect_and_align(store_root, tmp_path, capsys):
    cli(store_root, *SYNTH, "--out", "scan.zip")
    capsys.readouterr()
    assert cli(store_root, "inspect", "scan.zip") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "6 rows" and len(lines) == 7
    table = dataset_from_bytes(ObjectStore(store_root).get(DATASETS, "scan.zip")).poses_bounds
    npy = tmp_path / "t.npy"
    npy.write_bytes(npy_bytes(table))
    assert cli(store_root, "inspect", str(npy)) == 0
    capsys.readouterr()
    csv_path = tmp_path / "d.csv"
    assert cli(store_root, "align", str(npy), "scan.zip", "--out", str(csv_path)) == 0
    last = csv_path.read_text().splitlines()[-1].split(",")
    assert last[0] == "total" and float(last[-1]) <= 1e-9


def test_latency_and_errors(store_root, capsys):
    assert cli(store_root, "latency", "--scan", "120", "--preprocessing", "30", "--reconstruction", "9000", "--simplified") == 0
    assert capsys.readouterr().out.strip() == "9150"
    assert cli(store_root, "latency", "--scan", "-1") == 1
    assert "[latency]" in capsys.readouterr().err
    assert cli(store_root, "run") == 1
    assert cli(store_root, "inspect", "nope.zip") == 1
    with pytest.raises(SystemExit):
        cli(store_root, "run", "--stop-after", "bogus")


def test_failing_stage_exit_code_names_stage(store_root, capsys):
    store = ObjectStore(store_root)
    store.put(DATASETS, "junk.zip", b"not a zip")
    assert cli(store_root, "--retries", "0", "run", "junk.zip") == 1
    err = capsys.readouterr().err
    assert "[ingest]" in err and "FormatError" in err
