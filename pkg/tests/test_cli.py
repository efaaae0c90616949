"""CLI subcommands, file outputs, and exit codes."""

import json

import numpy as np
import pytest

from ciail.cli import main
from ciail.demos import load_demos, save_demos


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Full tiny pipeline: experts -> demos -> imitate, shared across tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(
        "\n".join([
            "env.horizon = 25",
            "expert.rounds = 3",
            "expert.episodes_per_round = 2",
            "expert.eval_every = 2",
            "expert.eval_episodes = 2",
            "train.rounds = 3",
            "train.episodes_per_round = 2",
            "train.eval_every = 2",
            "train.eval_episodes = 2",
            "policy.hidden = 8",
            "value.hidden = 8",
            "disc.hidden = 8",
            "demo.n_traj = 4",
        ]) + "\n",
        encoding="utf-8",
    )
    return root, cfg


def run(args):
    return main([str(a) for a in args])


def test_train_expert_and_collect_demos(workdir):
    root, cfg = workdir
    with pytest.warns(UserWarning):
        code = run(["train-expert", "--config", cfg, "--out", root / "experts",
                    "--seed", 0])
    assert code == 0
    for e in range(4):
        assert (root / "experts" / f"expert_e{e}.bin").exists()
        assert (root / "experts" / f"expert_e{e}.json").exists()

    code = run(["collect-demos", "--config", cfg, "--experts", root / "experts",
                "--out", root / "demos.jsonl", "--seed", 1])
    assert code == 0
    demos = load_demos(root / "demos.jsonl")
    assert len(demos.trajectories) == 4


def test_imitate_outputs(workdir):
    root, cfg = workdir
    code = run(["imitate", "--config", cfg, "--demos", root / "demos.jsonl",
                "--seed", 0, "--out", root / "run", "--quiet"])
    assert code == 0
    out = root / "run" / "seed_0"
    assert (out / "metrics.csv").exists()
    assert (out / "timing.csv").exists()
    assert (out / "config.resolved").exists()
    assert (out / "checkpoint.bin").exists()
    info = json.loads((out / "run_info.json").read_text())
    assert info["algo"] == "ppo" and info["head"] == "gail"
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == ("round,disc_loss,penalty,disc_acc,reward_mean,"
                      "eval_return_mean,eval_return_std,stale_signal")


def test_evaluate_checkpoint(workdir, capsys):
    root, cfg = workdir
    code = run(["evaluate", "--config", cfg,
                "--checkpoint", root / "run" / "seed_0" / "checkpoint.bin",
                "--episodes", 2, "--seed", 0])
    assert code == 0
    out = capsys.readouterr().out
    assert "ground-truth return" in out and "normalized" in out


def test_report_runs(workdir, capsys):
    root, cfg = workdir
    code = run(["report", root / "run" / "seed_0" / "metrics.csv",
                "--out", root / "report"])
    assert code == 0
    assert (root / "report" / "report.txt").exists()
    curves = list((root / "report").glob("curve_*.csv"))
    assert curves, "expected a learning-curve CSV"


def test_config_error_exit_code(workdir, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("env.gravity = 9.8\n", encoding="utf-8")
    assert run(["imitate", "--config", bad, "--demos", "x", "--out", tmp_path]) == 1


def test_runtime_error_exit_code(workdir, tmp_path):
    root, cfg = workdir
    # demos for the wrong env: load error -> exit 2
    demos = load_demos(root / "demos.jsonl")
    demos.header["env_id"] = "spur_point"
    demos.header["obs_dim"] = 5
    bad_path = tmp_path / "bad_demos.jsonl"
    save_demos(bad_path, demos)
    code = run(["imitate", "--config", cfg, "--demos", bad_path,
                "--seed", 0, "--out", tmp_path / "r"])
    assert code == 2


def test_set_override(workdir, capsys):
    root, cfg = workdir
    code = run(["imitate", "--config", cfg, "--demos", root / "demos.jsonl",
                "--seed", 7, "--out", root / "run_irm", "--quiet",
                "--set", "disc.reg=irm", "--set", "disc.lambda_irm=0.5"])
    assert code == 0
    resolved = (root / "run_irm" / "seed_7" / "config.resolved").read_text()
    assert "disc.reg = irm" in resolved
    assert "disc.lambda_irm = 0.5" in resolved
