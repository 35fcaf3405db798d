import json
import os

import numpy as np
import pytest

from wfrfm.cli import main
from wfrfm.datagen import SnapshotSet, save_snapshots


@pytest.fixture()
def toy_dataset(tmp_path):
    """Two-point snapshots: a cheap end-to-end target."""
    snaps = SnapshotSet(
        times=[0.0, 1.0],
        points=[np.array([[0.0, 0.0], [0.05, 0.0]]),
                np.array([[1.0, 0.5], [1.05, 0.5]])],
        weights=[np.full(2, 0.5), np.full(2, 0.5)],
        growth=[None, None], labels=[None, None],
    )
    path = str(tmp_path / "toy")
    save_snapshots(snaps, path)
    return path


def test_generate_requires_out(capsys):
    assert main(["generate", "gene"]) == 2


def test_unknown_command_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_generate_gene(tmp_path):
    out = str(tmp_path / "g")
    assert main(["generate", "gene", "--seed", "7", "--out", out,
                 "--n-steady", "10", "--n-transition", "10",
                 "--record-times", "0,4,8"]) == 0
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert len(manifest["times"]) == 3
    assert os.path.exists(os.path.join(out, "snapshot_2.tsv"))


def test_generate_mixture(tmp_path):
    out = str(tmp_path / "m")
    assert main(["generate", "mixture", "--dim", "10", "--out", out]) == 0
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert manifest["counts"] == [500, 1400]
    assert manifest["dimension"] == 10


def test_couple_writes_plans(toy_dataset, tmp_path):
    out = str(tmp_path / "plans")
    assert main(["couple", "--data", toy_dataset, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "plan_0.txt"))
    meta = json.load(open(os.path.join(out, "plan_0.txt.meta.json")))
    assert meta["shape"] == [2, 2]


def _train_toy(toy_dataset, tmp_path, epochs="400", seed="0"):
    out = str(tmp_path / f"run{seed}")
    rc = main(["train", "--data", toy_dataset, "--out", out,
               "--epochs", epochs, "--hidden", "32,32", "--batch-size", "64",
               "--sigma", "0.02", "--seed", seed])
    assert rc == 0
    return out


def test_train_and_evaluate_toy(toy_dataset, tmp_path):
    run = _train_toy(toy_dataset, tmp_path)
    log_lines = [json.loads(line) for line in open(os.path.join(run, "train_log.jsonl"))]
    assert log_lines[-1]["loss"] < 1e-2
    models = os.path.join(run, "models")
    assert os.path.exists(os.path.join(models, "velocity.npz"))

    ev = str(tmp_path / "ev")
    assert main(["evaluate", "--data", toy_dataset, "--models", models,
                 "--out", ev]) == 0
    report = json.load(open(os.path.join(ev, "evaluation.json")))
    final = report["per_time"]["1"]
    assert final["w1"] <= 0.1
    assert final["rme"] <= 0.1

    act = str(tmp_path / "act")
    assert main(["action", "--data", toy_dataset, "--models", models,
                 "--out", act, "--epsilon", "0.001"]) == 0
    payload = json.load(open(os.path.join(act, "action.json")))
    assert payload["action"] == pytest.approx(payload["static_reference"],
                                              rel=0.2)

    inf_dir = str(tmp_path / "inf")
    assert main(["infer", "--data", toy_dataset, "--models", models,
                 "--out", inf_dir, "--grid", "10"]) == 0
    assert os.path.exists(os.path.join(inf_dir, "checkpoint_1.tsv"))
    assert os.path.exists(os.path.join(inf_dir, "growth_grid_1.tsv"))


def test_seed_repeat_identical_logs(toy_dataset, tmp_path):
    run1 = _train_toy(toy_dataset, tmp_path, epochs="20", seed="5")
    log1 = open(os.path.join(run1, "train_log.jsonl")).read()
    run2 = str(tmp_path / "again")
    main(["train", "--data", toy_dataset, "--out", run2,
          "--epochs", "20", "--hidden", "32,32", "--batch-size", "64",
          "--sigma", "0.02", "--seed", "5"])
    log2 = open(os.path.join(run2, "train_log.jsonl")).read()
    # byte-identical apart from wall-time fields
    strip = lambda s: [{k: v for k, v in json.loads(line).items()
                        if k != "wall_time"} for line in s.splitlines()]
    assert strip(log1) == strip(log2)


def test_config_file_and_flag_override(toy_dataset, tmp_path):
    cfg_path = str(tmp_path / "cfg.json")
    out = str(tmp_path / "cfgrun")
    json.dump({"epochs": 3, "hidden": [8, 8], "sigma": 0.0}, open(cfg_path, "w"))
    assert main(["train", "--data", toy_dataset, "--out", out,
                 "--config", cfg_path, "--epochs", "5"]) == 0
    eff = json.load(open(os.path.join(out, "effective_config.json")))
    assert eff["epochs"] == 5  # flag beats config
    assert eff["hidden"] == [8, 8]  # config beats default


def test_config_unknown_key_rejected(toy_dataset, tmp_path):
    cfg_path = str(tmp_path / "cfg.json")
    json.dump({"epochz": 3}, open(cfg_path, "w"))
    with pytest.raises(SystemExit, match="unknown config keys"):
        main(["train", "--data", toy_dataset, "--out", str(tmp_path / "x"),
              "--config", cfg_path])


def test_data_error_exit_code(tmp_path):
    assert main(["train", "--data", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "o")]) == 3


def test_couple_requires_paths():
    assert main(["couple"]) == 2
