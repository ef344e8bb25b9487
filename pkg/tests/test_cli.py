import json
import subprocess
import sys
from pathlib import Path

import pytest

from mpcl.cli import default_config, main
from mpcl.data import load_manifest
from mpcl.train import read_log

SMALL = {
    "synth.classes": 3, "synth.per_class": 8, "synth.dim": 6, "synth.latent_dim": 4, "synth.groups": 6,
    "synth.frames": [3, 6], "synth.sigma_obs": 0.3, "folds.k": 2,
    "encoder.kind": "mlp", "encoder.embed_dim": 16, "encoder.hidden_dim": 16,
    "projection.hidden_dim": 16, "projection.out_dim": 8,
    "pretrain.batch_size": 8, "pretrain.lr": 0.01, "pretrain.max_epochs": 3, "pretrain.patience": 3,
    "pretrain.window_len": 3,
    "probe.hidden_dim": 16, "probe.train.batch_size": 8, "probe.train.max_epochs": 10,
    "probe.train.patience": 10,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.json").write_text(json.dumps(SMALL))
    assert main(["synth", "--config", str(root / "cfg.json"), "--out", str(root / "data"), "--quiet"]) == 0
    return root


def run(workspace, *argv):
    return main([*argv, "--config", str(workspace / "cfg.json"), "--quiet"])


def test_synth_writes_a_loadable_dataset(workspace):
    m = load_manifest(workspace / "data" / "manifest.json")
    assert len(m.samples) == 24
    assert (workspace / "data" / "folds.json").exists()
    echoed = json.loads((workspace / "data" / "effective_config.json").read_text())
    assert echoed["command"] == "synth" and echoed["synth.per_class"] == 8


def test_synth_is_byte_identical_for_a_seed(workspace, tmp_path):
    for name in ("again", "other"):
        seed = "0" if name == "again" else "1"
        assert run(workspace, "synth", "--out", str(tmp_path / name), "--seed", seed) == 0
    ref = workspace / "data"
    for p in ref.rglob("*"):
        if p.is_file() and p.name != "effective_config.json":
            assert (tmp_path / "again" / p.relative_to(ref)).read_bytes() == p.read_bytes(), p
    first = sorted((ref / "features").iterdir())[0]
    assert (tmp_path / "other" / "features" / first.name).read_bytes() != first.read_bytes()


def test_synth_flags(tmp_path):
    assert main(["synth", "--classes", "4", "--per-class", "2", "--modalities", "3", "--dim", "4",
                 "--groups", "4", "--k", "2", "--out", str(tmp_path), "--quiet"]) == 0
    m = load_manifest(tmp_path / "manifest.json")
    assert len(m.samples) == 8 and len(m.modalities) == 3


def test_pretrain_extract_probe_pipeline(workspace, capsys):
    data, out = workspace / "data", workspace / "run"
    manifest = str(data / "manifest.json")
    assert run(workspace, "pretrain", "--manifest", manifest, "--out", str(out)) == 0
    summary = json.loads(capsys.readouterr().out)
    assert (out / "checkpoint.mpck").read_bytes()[:4] == b"MPCK"
    log = read_log(out / "train_log.jsonl")
    assert len(log) == summary["epochs_run"]
    assert all(r["seconds"] is None for r in log)

    assert run(workspace, "extract", "--manifest", manifest, "--checkpoint", str(out / "checkpoint.mpck"),
               "--out", str(out)) == 0
    assert json.loads(capsys.readouterr().out)["dim"] == 3 * 16

    assert main(["probe", "--manifest", manifest, "--checkpoint", str(out / "checkpoint.mpck"), "--task",
                 "multiclass", "--out", str(out), "--config", str(workspace / "cfg.json")]) == 0
    captured = capsys.readouterr()
    assert "ACC" in captured.err and "w-ACC" in captured.err
    doc = json.loads((out / "metrics.json").read_text())
    assert {"per_class", "overall", "folds", "mean", "std"} <= set(doc)


def test_zero_lr_keeps_initialisation(workspace, capsys, tmp_path):
    manifest = str(workspace / "data" / "manifest.json")
    assert run(workspace, "pretrain", "--manifest", manifest, "--out", str(tmp_path / "a"), "--lr", "0") == 0
    a = json.loads(capsys.readouterr().out)["checksum"]
    assert run(workspace, "pretrain", "--manifest", manifest, "--out", str(tmp_path / "b"), "--lr", "0",
               "--epochs", "1", "--patience", "1") == 0
    assert json.loads(capsys.readouterr().out)["checksum"] == a


def test_effective_config_reproduces_the_run(workspace, tmp_path):
    manifest = str(workspace / "data" / "manifest.json")
    assert run(workspace, "pretrain", "--manifest", manifest, "--out", str(tmp_path / "a"), "--seed", "4") == 0
    echoed = tmp_path / "a" / "effective_config.json"
    assert main(["pretrain", "--manifest", manifest, "--config", str(echoed), "--out", str(tmp_path / "b"),
                 "--quiet"]) == 0
    assert (tmp_path / "a" / "checkpoint.mpck").read_bytes() == (tmp_path / "b" / "checkpoint.mpck").read_bytes()
    assert (tmp_path / "a" / "train_log.jsonl").read_bytes() == (tmp_path / "b" / "train_log.jsonl").read_bytes()


def test_crossval_summary_matches_recomputation(workspace, tmp_path):
    assert run(workspace, "crossval", "--manifest", str(workspace / "data" / "manifest.json"),
               "--fold-plan", str(workspace / "data" / "folds.json"), "--out", str(tmp_path)) == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    accs = [f["overall"]["acc"] for f in doc["folds"]]
    assert len(accs) == 2
    assert abs(doc["mean"]["acc"] - sum(accs) / 2) < 1e-12


def test_crossval_rejects_overlapping_plan(workspace, tmp_path):
    plan = json.loads((workspace / "data" / "folds.json").read_text())
    m = load_manifest(workspace / "data" / "manifest.json")
    a, b = [s.id for s in m.samples if s.group == m.samples[0].group][:2]
    plan["assignment"][a], plan["assignment"][b] = 0, 1
    (tmp_path / "bad.json").write_text(json.dumps(plan))
    assert run(workspace, "crossval", "--manifest", str(workspace / "data" / "manifest.json"),
               "--fold-plan", str(tmp_path / "bad.json"), "--out", str(tmp_path)) == 3


def test_exit_codes(workspace, tmp_path):
    manifest = str(workspace / "data" / "manifest.json")
    assert run(workspace, "probe", "--manifest", manifest, "--checkpoint", str(tmp_path / "none.mpck"),
               "--out", str(tmp_path)) == 3
    assert run(workspace, "pretrain", "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path)) == 3
    assert run(workspace, "pretrain", "--manifest", manifest, "--out", str(tmp_path), "--set", "bogus.key=1") == 2
    assert main(["pretrain", "--manifest", manifest, "--out", str(tmp_path), "--quiet",
                 "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["nonsense"]) == 2
    assert run(workspace, "probe", "--manifest", manifest, "--checkpoint", str(tmp_path / "x"),
               "--task", "multilabel", "--out", str(tmp_path)) == 2


def test_multilabel_probe_prints_per_class_scores(workspace, tmp_path, capsys):
    cfg = str(workspace / "cfg.json")
    assert main(["synth", "--config", cfg, "--task", "multilabel", "--out", str(tmp_path), "--quiet"]) == 0
    manifest = str(tmp_path / "manifest.json")
    assert main(["pretrain", "--config", cfg, "--manifest", manifest, "--out", str(tmp_path), "--quiet"]) == 0
    capsys.readouterr()
    assert main(["probe", "--config", cfg, "--manifest", manifest, "--checkpoint", str(tmp_path / "checkpoint.mpck"),
                 "--out", str(tmp_path)]) == 0
    err = capsys.readouterr().err
    assert "emotion0" in err and err.count("w-ACC") == 3 + 1
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["task"] == "multilabel"
    assert set(doc["per_class"]["emotion0"]) == {"wacc", "f1"}
    assert set(doc["overall"]) == {"wacc", "f1"}


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--configs", "3", "--out", str(tmp_path), "--quiet"]) == 0
    report = json.loads((tmp_path / "gradcheck.json").read_text())
    assert report["passed"] and report["max_rel_error"] < 1e-4
    capsys.readouterr()
    assert main(["gradcheck", "--configs", "3", "--out", str(tmp_path), "--quiet", "--inject-fault", "relu"]) == 4
    assert not json.loads((tmp_path / "gradcheck.json").read_text())["passed"]


def test_unknown_keys_in_defaults_are_flat():
    cfg = default_config()
    assert all(isinstance(k, str) for k in cfg)
    assert cfg["loss.temperature"] == 0.07 and cfg["pretrain.momentum"] == 0.9


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mpcl", "gradcheck", "--configs", "1", "--out", str(tmp_path),
                           "--quiet"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["passed"] is True
    assert Path(tmp_path / "effective_config.json").exists()
