import json
import subprocess
import sys

import pytest

from mardpg import cli


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text("eval:\n  sessions: 50\n  seeds: [0]\n  pairs: [[EW, EW], [MARDPG, MARDPG]]\n"
                    "train:\n  train_steps: 2\n  episodes_per_step: 2\n  minibatch: 4\n"
                    "l2r:\n  log_sessions: 50\n  epochs: 1\n")
    return path


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_train_then_evaluate_from_checkpoint(capsys, tiny, tmp_path):
    code, out, _ = run(capsys, "train", "--config", str(tiny), "--seed", "0", "--out", str(tmp_path / "t"))
    assert code == 0
    result = json.loads(out)
    ckpt = result["seeds"]["0"]["checkpoint"]
    code, out, _ = run(capsys, "evaluate", "--config", str(tiny), "--seed", "0", "--out", str(tmp_path / "e"),
                       "--checkpoint", ckpt)
    assert code == 0 and json.loads(out)["records"] == 1
    assert (tmp_path / "e/metrics.csv").exists()


def test_compare_reports_gaps(capsys, tiny, tmp_path):
    code, out, _ = run(capsys, "compare", "--config", str(tiny), "--out", str(tmp_path))
    assert code == 0
    pairs = json.loads(out)["pairs"]
    assert pairs["EW+EW"]["gap_total"] == 0.0 and "MARDPG+MARDPG" in pairs


def test_beach_oracle_command(capsys, tmp_path):
    code, out, _ = run(capsys, "beach-oracle", "--config", "configs/beach.yaml", "--out", str(tmp_path))
    assert code == 0 and json.loads(out)["best_reward"] == 101.0


def test_gradcheck_command(capsys, tmp_path):
    code, out, _ = run(capsys, "gradcheck", "--seed", "0", "--out", str(tmp_path))
    assert code == 0 and json.loads(out)["passed"]
    assert (tmp_path / "gradcheck.json").exists()


def test_config_error_exit_code_and_one_line(capsys, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  gamma: 1.5\n")
    code, out, err = run(capsys, "train", "--config", str(bad), "--out", str(tmp_path))
    assert code == 2 and out == ""
    lines = err.strip().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["path"] == "train.gamma"


def test_task_mismatch_is_a_config_error(capsys, tmp_path):
    code, _, err = run(capsys, "evaluate", "--config", "configs/beach.yaml", "--out", str(tmp_path))
    assert code == 2 and json.loads(err.strip().splitlines()[-1])["path"] == "task"


def test_runtime_failure_exit_code(capsys, tiny, tmp_path):
    code, _, err = run(capsys, "evaluate", "--config", str(tiny), "--out", str(tmp_path),
                       "--checkpoint", str(tmp_path / "missing.npz"))
    assert code == 1
    assert json.loads(err.strip().splitlines()[-1])["error"] == "FileNotFoundError"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mardpg", "beach-oracle", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "beach-oracle"
