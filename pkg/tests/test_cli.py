"""Command line behavior, driven through real subprocess invocations."""

import json
import os
import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "datatree.cli"]


def invoke(*argv, env_extra=None, cwd=None):
    env = dict(os.environ)
    env.pop("DATATREE_LOG_LEVEL", None)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        CLI + list(argv), capture_output=True, text=True, env=env, cwd=cwd, timeout=120
    )


def write_run_config(tmp_path, world_name="world.json", extra_run=""):
    config = tmp_path / "run.toml"
    config.write_text(
        f"""
[task]
id = "cli-task"

[schedule]
T = 8
seed = 3

[run]
output_dir = "out"
sim_world = "{world_name}"
{extra_run}
""",
        encoding="utf-8",
    )
    return config


@pytest.fixture
def sim_setup(tmp_path):
    result = invoke("simgen", "--seed", "11", "--datasets", "8", "--out", str(tmp_path / "world.json"))
    assert result.returncode == 0, result.stderr
    return tmp_path, write_run_config(tmp_path)


def test_simgen_writes_world_and_oracle(tmp_path):
    out = tmp_path / "w.json"
    result = invoke(
        "simgen", "--seed", "4", "--datasets", "7", "--out", str(out), "--show-oracle"
    )
    assert result.returncode == 0, result.stderr
    info = json.loads(result.stdout)
    assert info["seed"] == 4
    world = json.loads(out.read_text())
    assert len(world["latent_datasets"]) == 7
    assert 0.0 < info["oracle_score"] < 2.0
    assert info["oracle_selection"]


def test_run_then_status_then_analyze(sim_setup):
    tmp_path, config = sim_setup
    result = invoke("run", "--config", str(config))
    assert result.returncode == 0, result.stderr
    summary = json.loads(result.stdout)
    assert summary["rounds_used"] == 8
    run_dir = summary["run_dir"]
    assert run_dir == str(tmp_path / "out")

    status = invoke("status", run_dir)
    assert status.returncode == 0, status.stderr
    st = json.loads(status.stdout)
    assert st["task"] == "cli-task"
    assert st["rounds_used"] == 8
    assert st["complete"] is True

    report_path = tmp_path / "analysis.json"
    analyze = invoke("analyze", run_dir, "--out", str(report_path))
    assert analyze.returncode == 0, analyze.stderr
    report = json.loads(analyze.stdout)
    assert report["overcome_rate"] is not None
    assert json.loads(report_path.read_text()) == report


def test_run_overrides_flags(sim_setup):
    tmp_path, config = sim_setup
    out_dir = tmp_path / "elsewhere"
    result = invoke(
        "run", "--config", str(config), "--rounds", "4", "--seed", "9", "--out", str(out_dir)
    )
    assert result.returncode == 0, result.stderr
    summary = json.loads(result.stdout)
    assert summary["rounds_used"] == 4
    assert summary["run_dir"] == str(out_dir)
    run_meta = json.loads((out_dir / "run.json").read_text())
    assert run_meta["schedule"]["seed"] == 9
    assert run_meta["schedule"]["T"] == 4


def test_resume_completes_interrupted_run(sim_setup):
    tmp_path, config = sim_setup
    first = invoke("run", "--config", str(config), "--rounds", "6")
    assert first.returncode == 0, first.stderr
    run_dir = json.loads(first.stdout)["run_dir"]
    # Rewrite the stored budget upward; resume honors the stored config.
    meta_path = tmp_path / "out" / "run.json"
    meta = json.loads(meta_path.read_text())
    meta["schedule"]["T"] = 10
    meta_path.write_text(json.dumps(meta), encoding="utf-8")
    result = invoke("resume", run_dir)
    assert result.returncode == 0, result.stderr
    assert json.loads(result.stdout)["rounds_used"] == 10


def test_resume_rejects_non_run_dir(tmp_path):
    result = invoke("resume", str(tmp_path))
    assert result.returncode == 2
    assert "not a run directory" in result.stderr


def test_missing_config_exits_2(tmp_path):
    result = invoke("run", "--config", str(tmp_path / "nope.toml"))
    assert result.returncode == 2
    assert "config error" in result.stderr


def test_invalid_config_exits_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[task]\nid = \"x\"\n[schedule]\nT = 0\n", encoding="utf-8")
    result = invoke("run", "--config", str(bad))
    assert result.returncode == 2


def test_bad_log_level_exits_2(sim_setup):
    _, config = sim_setup
    result = invoke(
        "run", "--config", str(config), env_extra={"DATATREE_LOG_LEVEL": "loud"}
    )
    assert result.returncode == 2
    assert "DATATREE_LOG_LEVEL" in result.stderr


def test_debug_logging_emits_progress(sim_setup):
    _, config = sim_setup
    result = invoke(
        "run", "--config", str(config), env_extra={"DATATREE_LOG_LEVEL": "info"}
    )
    assert result.returncode == 0
    assert "run starting" in result.stderr


def test_locked_run_dir_exits_2(sim_setup):
    tmp_path, config = sim_setup
    out = tmp_path / "out"
    out.mkdir()
    (out / "LOCK").write_text("999", encoding="utf-8")
    result = invoke("run", "--config", str(config))
    assert result.returncode == 2
    assert "locked" in result.stderr


def test_corrupted_log_exits_4(sim_setup):
    tmp_path, config = sim_setup
    first = invoke("run", "--config", str(config))
    assert first.returncode == 0
    events = tmp_path / "out" / "events.jsonl"
    text = events.read_text().splitlines(keepends=True)
    events.write_text("".join(text[:-1]) + text[-1][: len(text[-1]) // 2], encoding="utf-8")
    result = invoke("status", str(tmp_path / "out"))
    assert result.returncode == 4
    assert "corrupted" in result.stderr.lower()


def test_baseline_failure_exits_3(tmp_path):
    gen = invoke(
        "simgen", "--seed", "11", "--datasets", "8",
        "--black-fail-rate", "1.0", "--out", str(tmp_path / "world.json"),
    )
    assert gen.returncode == 0
    config = write_run_config(tmp_path)
    result = invoke("run", "--config", str(config))
    assert result.returncode == 3
    assert "executor error" in result.stderr


def test_audit_command(tmp_path):
    train = tmp_path / "train.txt"
    test = tmp_path / "test.txt"
    train.write_text("the quick brown fox\nsomething new entirely\n", encoding="utf-8")
    test.write_text("the quick brown fox\n", encoding="utf-8")
    out = tmp_path / "audit.json"
    result = invoke(
        "audit", "--train", str(train), "--test", str(test), "--out", str(out)
    )
    assert result.returncode == 0, result.stderr
    report = json.loads(result.stdout)
    assert report["exact_matches"] == 1
    assert report["train_samples"] == 2
    assert json.loads(out.read_text()) == report


def test_audit_missing_corpus_exits_2(tmp_path):
    result = invoke("audit", "--train", str(tmp_path / "a.txt"), "--test", str(tmp_path / "b.txt"))
    assert result.returncode == 2
    assert "cannot read corpus" in result.stderr


def test_simgen_rejects_bad_world(tmp_path):
    result = invoke("simgen", "--seed", "1", "--datasets", "1", "--out", str(tmp_path / "w.json"))
    assert result.returncode == 2


def test_console_script_entry_point():
    result = subprocess.run(
        ["datatree", "--help"], capture_output=True, text=True, timeout=60
    )
    assert result.returncode == 0
    assert "budgeted tree search" in result.stdout
