import json
import os
import subprocess
import sys

import pytest

from cpgan.config import save_config
from helpers import tiny_config


def cpgan(*args, env=None):
    full_env = {**os.environ, **(env or {})}
    return subprocess.run([sys.executable, "-m", "cpgan.cli", *map(str, args)], capture_output=True, text=True,
                          env=full_env, timeout=600)


def error_record(proc):
    lines = proc.stderr.strip().splitlines()
    assert len(lines) == 1, proc.stderr
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    proc = cpgan("synth-data", "--n", 8, "--seed", 0, "--out-dir", root / "data")
    assert proc.returncode == 0, proc.stderr
    cfg = tiny_config(root / "run", iterations=2, data_dir=str(root / "data"))
    save_config(cfg, root / "run.txt")
    proc = cpgan("train", "--config", root / "run.txt")
    assert proc.returncode == 0, proc.stderr
    return root


def test_synth_data_writes_manifest(workspace):
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert len(manifest["pairs"]) == 8
    assert len(list((workspace / "data").glob("*_ni_lr.png"))) == 8


def test_train_eval_infer(workspace):
    ckpt = workspace / "run" / "checkpoint.cpgk"
    assert ckpt.exists()
    proc = cpgan("eval", "--checkpoint", ckpt, "--data-dir", workspace / "data")
    assert proc.returncode == 0
    methods = [json.loads(l)["method"] for l in proc.stdout.splitlines() if l.startswith("{")]
    assert methods == ["cpgan", "bicubic"]
    args = ["infer", "--checkpoint", ckpt, "--input", workspace / "data" / "00000_ni_lr.png",
            "--guide", workspace / "data" / "00001_ui_hr.png"]
    assert cpgan(*args, "--out", workspace / "a.png").returncode == 0
    assert cpgan(*args, "--out", workspace / "b.png").returncode == 0
    assert (workspace / "a.png").read_bytes() == (workspace / "b.png").read_bytes()


def test_augment_writes_styles_per_image(workspace, tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    for name in ("00000_ui_hr.png", "00001_ui_hr.png"):
        (src / name).write_bytes((workspace / "data" / name).read_bytes())
    proc = cpgan("augment", "--in-dir", src, "--out-dir", tmp_path / "aug", "--styles", 3, "--seed", 1, "--steps", 1)
    assert proc.returncode == 0, proc.stderr
    assert sorted(p.name for p in (tmp_path / "aug").iterdir()) == [
        f"{i:05d}_style{k:02d}.png" for i in range(2) for k in range(3)
    ]


def test_gradcheck_subset():
    proc = cpgan("gradcheck", "--cases", "conv2d,adain", "--seeds", 1)
    assert proc.returncode == 0, proc.stderr
    records = [json.loads(l) for l in proc.stdout.splitlines()]
    assert [r["case"] for r in records] == ["conv2d", "adain"]
    assert all(r["passed"] and r["max_rel_error"] < 1e-4 for r in records)


@pytest.mark.parametrize("args, kind", [
    (["train"], "usage"),
    (["frobnicate"], "usage"),
    (["gradcheck", "--cases", "nope"], "usage"),
    (["eval", "--checkpoint", "/nonexistent.cpgk", "--data-dir", "/nonexistent"], "FileNotFoundError"),
    (["augment", "--in-dir", "/nonexistent", "--out-dir", "/tmp/x"], "FileNotFoundError"),
])
def test_failures_are_one_json_line(args, kind):
    proc = cpgan(*args)
    assert proc.returncode == (2 if kind == "usage" else 1)
    rec = error_record(proc)
    assert rec["type"] == kind and rec["error"]


def test_corrupt_checkpoint_error(tmp_path):
    (tmp_path / "bad.cpgk").write_bytes(b"nope")
    proc = cpgan("eval", "--checkpoint", tmp_path / "bad.cpgk", "--data-dir", tmp_path)
    assert proc.returncode == 1
    assert error_record(proc)["type"] == "CheckpointError"


def test_log_level_env(workspace):
    proc = cpgan("synth-data", "--n", 2, "--out-dir", workspace / "x", env={"CPGAN_LOG_LEVEL": "LOUD"})
    assert proc.returncode == 2
    assert "CPGAN_LOG_LEVEL" in error_record(proc)["error"]
    proc = cpgan("train", "--config", workspace / "run.txt", env={"CPGAN_LOG_LEVEL": "info"})
    assert proc.returncode == 0
    assert "INFO" in proc.stderr
