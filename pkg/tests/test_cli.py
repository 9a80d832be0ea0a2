import csv
import json
import subprocess
import sys

import pytest

from cmr_forge import cli
from cmr_forge.cine_io import read_cine


def run(*argv):
    return cli.main([str(a) for a in argv])


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


def labels(d):
    with open(d / "labels.csv", newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """phantom -> roi -> corrupt at two levels, on small grids."""
    root = tmp_path_factory.mktemp("cli")
    d = {k: root / k for k in ("raw", "crop", "real", "c1", "c2", "val", "valc1", "valc2")}
    assert run("phantom", "--n", 8, "--grid", 96, 96, "--T", 10, "--seed", 7, "--out", d["raw"]) == 0
    assert run("roi", "--in", d["raw"], "--size", 40, "--out", d["crop"]) == 0
    assert run("corrupt", "--in", d["crop"], "--type", "mistrigger", "--severity", 1, "--seed", 7,
               "--out", d["c1"]) == 0
    assert run("corrupt", "--in", d["crop"], "--type", "breathing", "--severity", 2, "--seed", 7,
               "--out", d["c2"]) == 0
    return d


def test_phantom_outputs(pipeline):
    raw = pipeline["raw"]
    assert len(list(raw.glob("*.cine"))) == 8
    truth = json.loads((raw / "phantom00000.json").read_text())
    assert truth["schema"] == 1 and len(truth["radius"]) == 10
    m = manifest(raw)
    assert m["seed"] == 7 and m["command"] == "phantom" and m["version"]
    assert len(m["config_hash"]) == 64
    assert all(r["label"] == "0" for r in labels(raw))


def test_roi_outputs(pipeline):
    crop = pipeline["crop"]
    seq = read_cine(crop / "phantom00003.cine")
    assert seq.shape == (10, 40, 40)
    assert 0 <= seq.frames.min() and seq.frames.max() <= 1
    roi = json.loads((crop / "phantom00003.roi.json").read_text())
    truth = json.loads((pipeline["raw"] / "phantom00003.json").read_text())
    assert max(abs(a - b) for a, b in zip(roi["center"], truth["center"])) <= 4


def test_corrupt_outputs(pipeline):
    rows = labels(pipeline["c1"])
    assert len(rows) == 8
    assert {r["artefact_type"] for r in rows} == {"mistrigger"}
    assert {r["severity"] for r in rows} == {"1"} and {r["label"] for r in rows} == {"1"}
    assert rows[0]["id"].endswith("_m01")


def test_phantom_deterministic(tmp_path, pipeline):
    assert run("phantom", "--n", 8, "--grid", 96, 96, "--T", 10, "--seed", 7, "--out", tmp_path) == 0
    names = sorted(p.name for p in pipeline["raw"].iterdir())
    assert names == sorted(p.name for p in tmp_path.iterdir())
    for name in names:
        assert (tmp_path / name).read_bytes() == (pipeline["raw"] / name).read_bytes(), name


def test_env_seed_and_override(tmp_path, monkeypatch):
    monkeypatch.setenv("FORGE_SEED", "11")
    assert run("phantom", "--n", 1, "--grid", 96, 96, "--T", 4, "--out", tmp_path / "a") == 0
    assert manifest(tmp_path / "a")["seed"] == 11
    assert run("phantom", "--n", 1, "--grid", 96, 96, "--T", 4, "--seed", 3, "--out", tmp_path / "b") == 0
    assert manifest(tmp_path / "b")["seed"] == 3
    monkeypatch.setenv("FORGE_SEED", "eleven")
    assert run("phantom", "--n", 1, "--out", tmp_path / "c") == 1


def test_train_curriculum_and_eval(pipeline, tmp_path):
    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({"lr": 0.01, "batch_size": 4, "grad_clip": 1.0, "max_epochs": 2}))
    ckpt = tmp_path / "tr" / "model.ckpt"
    assert run("train", "--arch", "lrcn", "--config", cfg, "--train", pipeline["crop"], pipeline["c1"],
               "--val", pipeline["c2"], pipeline["crop"], "--out", ckpt) == 0
    assert ckpt.exists()
    hist = json.loads(ckpt.with_name("model.ckpt.history.json").read_text())
    assert hist["schema"] == 1 and len(hist["train_loss"]) == 2
    assert manifest(ckpt.parent)["config"]["train"]["max_epochs"] == 2

    cur = tmp_path / "cur"
    assert run("curriculum-run", "--mode", "anti", "--stages", 2, "--epochs-per-stage", 1, "--config", cfg,
               "--real", pipeline["crop"], "--synthetic", pipeline["c1"], pipeline["c2"],
               "--val", pipeline["crop"], pipeline["c2"], "--out", cur) == 0
    stages = json.loads((cur / "stages.json").read_text())
    assert [s["stage"] for s in stages["stages"]] == ["severity2", "severity1"]
    assert [s["pool_size"] for s in stages["stages"]] == [16, 24]

    # curriculum-run needs every level 1..b
    assert run("curriculum-run", "--mode", "curriculum", "--stages", 3, "--config", cfg,
               "--real", pipeline["crop"], "--synthetic", pipeline["c1"], pipeline["c2"],
               "--val", pipeline["crop"], "--out", tmp_path / "bad") == 2

    ev = tmp_path / "ev"
    mixed = tmp_path / "mixed"
    mixed.mkdir()
    rows = labels(pipeline["crop"]) + labels(pipeline["c1"])
    for src in (pipeline["crop"], pipeline["c1"]):
        for f in src.glob("*.cine"):
            (mixed / f.name).write_bytes(f.read_bytes())
    with open(mixed / "labels.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    assert run("eval", "--in", mixed, "--ckpt", cur / "model.ckpt", "--compare-baseline", "--k", 4,
               "--out", ev) == 0
    rep = json.loads((ev / "eval.json").read_text())
    assert rep["schema"] == 1 and len(rep["folds"]) == 4
    assert set(rep["delong"]) == {"auc_a", "auc_b", "p"}
    assert rep["roc"][0] == [0.0, 0.0] and rep["roc"][-1] == [1.0, 1.0]
    assert run("eval", "--in", mixed, "--k", 4, "--out", tmp_path / "ev2") == 0


def test_usage_errors(tmp_path, capsys):
    assert run("frobnicate") == 1
    assert "usage" in capsys.readouterr().err
    assert run() == 1
    assert run("phantom", "--out", tmp_path) == 1
    assert run("--threads", 0, "phantom", "--n", 1, "--out", tmp_path) == 1


def test_data_errors(tmp_path):
    assert run("roi", "--in", tmp_path / "missing", "--out", tmp_path / "o") == 2
    d = tmp_path / "bad"
    d.mkdir()
    (d / "x.cine").write_bytes(b"not a cine file")
    (d / "labels.csv").write_text("id,path,label,provenance,artefact_type,severity\nx,x.cine,0,real,,\n")
    assert run("corrupt", "--in", d, "--type", "breathing", "--severity", 1, "--out", tmp_path / "o") == 2
    assert run("eval", "--in", d, "--ckpt", d / "x.cine", "--out", tmp_path / "o") == 2


def test_numeric_failure(tmp_path, monkeypatch):
    def boom(args):
        raise FloatingPointError("non-finite gradient")
    monkeypatch.setitem(cli.COMMANDS, "phantom", boom)
    assert run("phantom", "--n", 1, "--out", tmp_path) == 3


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "cmr_forge.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("forge ")
