import csv
import gzip
import json

import numpy as np
import pytest
import yaml

from navdqn.cli import main
from navdqn.config import load_config
from navdqn.geometry import Action
from navdqn.nn import AdamState, QNetwork, load_checkpoint, save_checkpoint

SMALL = {
    "stage": {"kind": "static", "n_static": 1},
    "env": {"n_beams": 12, "max_episode_steps": 50},
    "train": {"hidden_sizes": [16, 8], "max_steps": 400, "checkpoint_every": 200},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def _train(cfg_path, out, seed=3, extra=()):
    return main(["train", "--config", str(cfg_path), "--seed", str(seed), "--out", str(out), *extra])


def test_train_writes_artifacts(small_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert _train(small_config, out) == 0
    assert (out / "config.resolved.yaml").exists() and (out / "train_log.jsonl").exists()
    assert (out / "checkpoints" / "final.a2dq").exists() and (out / "checkpoints" / "step_00000200.a2dq").exists()
    assert load_config(out / "config.resolved.yaml").seed == 3
    with gzip.open(out / "steps.jsonl.gz", "rt") as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 401 and json.loads(lines[0])["seed"] == 3
    assert "trained 400 steps" in capsys.readouterr().out


def test_same_seed_same_outputs(small_config, tmp_path):
    _train(small_config, tmp_path / "a")
    _train(small_config, tmp_path / "b")
    for rel in ("train_log.jsonl", "checkpoints/final.a2dq"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_semantic_stage_trains_wider_net(small_config, tmp_path):
    out = tmp_path / "sem"
    assert _train(small_config, out, extra=["--stage", "semantic"]) == 0
    net = load_checkpoint(out / "checkpoints" / "final.a2dq").net
    assert net.input_width == 12 + 4 + 3


def test_replay_exact_and_divergent(small_config, tmp_path, capsys):
    out = tmp_path / "run"
    _train(small_config, out)
    log = out / "steps.jsonl.gz"
    capsys.readouterr()
    assert main(["replay", str(log)]) == 0
    assert capsys.readouterr().out.strip() == "exact"

    assert main(["replay", str(log), "--seed", "4"]) == 1
    assert "diverged" in capsys.readouterr().out

    with gzip.open(log, "rt") as fh:
        lines = fh.read().splitlines()
    rec = json.loads(lines[20])
    rec["action"] = (rec["action"] + 1) % 7
    lines[20] = json.dumps(rec)
    tampered = tmp_path / "tampered.jsonl"
    tampered.write_text("\n".join(lines) + "\n")
    assert main(["replay", str(tampered)]) == 1
    assert capsys.readouterr().out.strip().startswith("diverged at step 19")


def _forward_checkpoint(path, width):
    net = QNetwork([np.zeros((7, width), np.float32)], [np.eye(7, dtype=np.float32)[Action.FORWARD]], 0.0)
    save_checkpoint(net, AdamState.for_network(net), path)
    return path


def test_eval_and_metrics(small_config, tmp_path, capsys):
    ckpt = _forward_checkpoint(tmp_path / "fwd.a2dq", 15)
    goals = tmp_path / "goals.yaml"
    goals.write_text(yaml.safe_dump({"goals": [[0.3, 0.0], [0.45, 0.0]]}))
    ev = tmp_path / "ev"
    code = main(
        ["eval", "--config", str(small_config), "--stage", "static", "--out", str(ev), "--checkpoint", str(ckpt),
         "--goals", str(goals), "--timeout-s", "5", "--runs-per-goal", "2", "--name", "fwd"]
    )
    assert code == 0, capsys.readouterr().err
    summary = json.loads((ev / "summary.json").read_text())
    assert summary["successes"] == 4 and summary["failures"] == 0 and summary["approach"] == "fwd"
    assert summary["mean_distance"] == pytest.approx(((0.3 - 0.15) + (0.45 - 0.15)) / 2, abs=0.016)
    assert len((ev / "runs.jsonl").read_text().splitlines()) == 4
    assert len(list((ev / "trajectories" / "fwd").glob("*.csv"))) == 4
    assert main(["metrics", str(ev / "summary.json"), str(ev / "summary.json"), "--out", str(tmp_path / "m")]) == 0
    rows = list(csv.reader((tmp_path / "m" / "metrics.csv").open()))
    assert len(rows) == 3


def test_eval_timeout_failures_exhaust_attempts(small_config, tmp_path, capsys):
    ckpt = _forward_checkpoint(tmp_path / "fwd.a2dq", 15)
    goals = tmp_path / "goals.yaml"
    goals.write_text(yaml.safe_dump({"goals": [[-1.0, 0.0]]}))
    code = main(
        ["eval", "--config", str(small_config), "--out", str(tmp_path / "ev"), "--checkpoint", str(ckpt),
         "--goals", str(goals), "--timeout-s", "1"]
    )
    assert code == 2 and "no success" in capsys.readouterr().err


def test_eval_rejects_mismatched_checkpoint(small_config, tmp_path, capsys):
    run = tmp_path / "run"
    _train(small_config, run)
    code = main(
        ["eval", "--config", str(small_config), "--stage", "semantic", "--out", str(tmp_path / "ev"),
         "--checkpoint", str(run / "checkpoints" / "final.a2dq")]
    )
    assert code == 2 and "inputs" in capsys.readouterr().err


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  learning_rat: 0.1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "learning_rat" in capsys.readouterr().err


def test_missing_checkpoint(tmp_path, capsys):
    code = main(["eval", "--out", str(tmp_path / "o"), "--checkpoint", str(tmp_path / "nope.a2dq")])
    assert code == 2


def test_metrics_merges_summaries(tmp_path):
    for name in ("a", "b"):
        (tmp_path / f"{name}.json").write_text(
            json.dumps({"approach": name, "mean_distance": 1.0, "mean_time": 2.0, "error_rate": 0.0,
                        "obstacles_hit": 0, "successes": 30, "failures": 0})
        )
    assert main(["metrics", str(tmp_path / "a.json"), str(tmp_path / "b.json"), "--out", str(tmp_path / "m")]) == 0
    rows = list(csv.reader((tmp_path / "m" / "metrics.csv").open()))
    assert [r[0] for r in rows] == ["approach", "a", "b"]
