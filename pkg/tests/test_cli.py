import csv
import hashlib
import json
from pathlib import Path

import pytest

from activetrack.cli import main
from activetrack.diffusion import load_checkpoint


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_cli(args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("data")
    code = run_cli(["dataset", "--n", 24, "--seed", 1, "--run-dir", run_dir])
    assert code == 0
    return run_dir / "planning.jsonl"


def test_dataset_deterministic_rerun(tmp_path, small_dataset):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert run_cli(["dataset", "--n", 12, "--seed", 3, "--run-dir", a]) == 0
    assert run_cli(["dataset", "--n", 12, "--seed", 3, "--run-dir", b]) == 0
    assert sha(a / "planning.jsonl") == sha(b / "planning.jsonl")
    man_a = json.loads((a / "manifest.json").read_text())
    man_b = json.loads((b / "manifest.json").read_text())
    assert man_a["outputs"] == man_b["outputs"]
    assert man_a["seed"] == 3


def test_dataset_rejects_zero(capsys):
    with pytest.raises(SystemExit) as err:
        run_cli(["dataset", "--n", 0, "--run-dir", "unused"])
    assert err.value.code == 2


def test_train_smoke_and_flat_lr_zero(tmp_path, small_dataset):
    run_dir = tmp_path / "train"
    code = run_cli(["train", "--data", small_dataset, "--epochs", 1,
                    "--k-steps", 4, "--hidden", 16, "--seed", 2,
                    "--run-dir", run_dir])
    assert code == 0
    predictor, schedule, horizon = load_checkpoint(run_dir / "checkpoint.bin")
    assert schedule.K == 4
    assert horizon == 16
    flat_dir = tmp_path / "flat"
    code = run_cli(["train", "--data", small_dataset, "--epochs", 3,
                    "--k-steps", 4, "--hidden", 16, "--lr", 0.0, "--seed", 2,
                    "--run-dir", flat_dir])
    assert code == 0
    with open(flat_dir / "loss.csv") as fh:
        rows = list(csv.DictReader(fh))
    losses = {row["mean_loss"] for row in rows}
    assert len(rows) == 4
    assert len(losses) == 1


def test_verify_theory_small(tmp_path):
    run_dir = tmp_path / "theory"
    code = run_cli(["verify-theory", "--trials", 3, "--instances", 2,
                    "--dim", 32, "--per-instance", 5, "--probes", 128,
                    "--seed", 5, "--run-dir", run_dir])
    assert code == 0
    report = json.loads((run_dir / "theory.json").read_text())
    assert report["pass_rate"]["lemma1"] == 1.0
    assert report["pass_rate"]["prop1"] == 1.0


def test_verify_theory_vacuous_single_instance(tmp_path):
    code = run_cli(["verify-theory", "--trials", 2, "--instances", 1,
                    "--dim", 16, "--per-instance", 3, "--probes", 64,
                    "--eta", 0.0, "--view-dirs", 2, "--seed", 6,
                    "--run-dir", tmp_path / "vac"])
    assert code == 0


def test_verify_theory_near_violation_stress(tmp_path):
    code = run_cli(["verify-theory", "--trials", 2, "--instances", 2,
                    "--dim", 32, "--delta", 0.99, "--eta", 0.98,
                    "--per-instance", 4, "--probes", 64, "--seed", 7,
                    "--run-dir", tmp_path / "stress"])
    assert code == 0


def test_eval_minimal_and_deterministic(tmp_path):
    a = tmp_path / "ea"
    b = tmp_path / "eb"
    args = ["eval", "--preset", "standard", "--variant", "no_planner_pid",
            "--episodes", 2, "--max-steps", 25, "--seed", 4]
    assert run_cli(args + ["--run-dir", a]) == 0
    assert run_cli(args + ["--run-dir", b]) == 0
    assert sha(a / "episodes.jsonl") == sha(b / "episodes.jsonl")
    assert sha(a / "metrics.csv") == sha(b / "metrics.csv")
    with open(a / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["scenario", "AR", "EL", "SR", "TSR", "CAR",
                       "episodes", "seed"]
    assert rows[1][0] == "standard/no_planner_pid"


def test_eval_single_step(tmp_path):
    code = run_cli(["eval", "--preset", "standard", "--variant",
                    "no_planner_pid", "--episodes", 1, "--max-steps", 1,
                    "--seed", 1, "--run-dir", tmp_path / "one"])
    assert code == 0


def test_eval_agent_override_flag(tmp_path):
    code = run_cli(["eval", "--preset", "standard", "--variant",
                    "no_planner_pid", "--episodes", 1, "--max-steps", 5,
                    "--eta-s", 0.7, "--seed", 1, "--run-dir", tmp_path / "ov"])
    assert code == 0


def test_grad_check_passes():
    assert run_cli(["grad-check", "--seed", 3]) == 0


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("OAVAT_SEED", "17")
    run_dir = tmp_path / "env"
    assert run_cli(["dataset", "--n", 3, "--run-dir", run_dir]) == 0
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["seed"] == 17
