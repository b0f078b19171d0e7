"""TOML run configuration loading, defaults, overrides, and validation."""

import pytest

from datatree.config import ConfigError, RunConfig, apply_overrides, load_config
from datatree.tree import Direction, NodeKind


FULL_TOML = """
[task]
id = "demo"
description = "toy selection task"
metric = "accuracy"
direction = "lower_better"
reward_bounds = [0.0, 2.0]
blocklist = ["evil.example.org", "*.leaked.net"]
initial_selection = ["p0", "p1"]

[schedule]
T = 12
seed = 7
c0 = 1.0
c_min = 0.2
decay_kind = "exponential"
gamma = 0.9
num_red = 2
num_black = 3
max_black_per_red = 4

[executors.red]
command = "python3 discover.py --fast"
timeout_seconds = 30

[executors.black]
command = ["python3", "adapt.py"]

[run]
output_dir = "runs/demo"
gold_score = 0.1
median_score = 0.5
checkpoint_every = 3
wall_limit = 600.0
"""


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_full_config_round_trip(tmp_path):
    cfg = load_config(write_config(tmp_path, FULL_TOML))
    assert cfg.task.task_id == "demo"
    assert cfg.task.direction == Direction.LOWER_BETTER
    assert cfg.task.reward_bounds == (0.0, 2.0)
    assert cfg.task.blocklist == ["evil.example.org", "*.leaked.net"]
    assert cfg.schedule.T == 12
    assert cfg.schedule.seed == 7
    assert cfg.schedule.decay_kind == "exponential"
    assert cfg.schedule.num_black == 3
    # Defaults persist for untouched knobs.
    assert cfg.schedule.alpha == pytest.approx(0.01)
    assert cfg.schedule.parallelism == 1
    assert cfg.executors[NodeKind.RED].argv == ("python3", "discover.py", "--fast")
    assert cfg.executors[NodeKind.RED].timeout_seconds == 30.0
    assert cfg.executors[NodeKind.BLACK].argv == ("python3", "adapt.py")
    assert cfg.executors[NodeKind.BLACK].timeout_seconds is None
    assert cfg.output_dir == tmp_path / "runs" / "demo"
    assert cfg.initial_state == {"selection": ["p0", "p1"]}
    assert cfg.gold_score == pytest.approx(0.1)
    assert cfg.checkpoint_every == 3
    assert cfg.wall_limit == pytest.approx(600.0)
    rebuilt = RunConfig.from_dict(cfg.to_dict())
    assert rebuilt.to_dict() == cfg.to_dict()


def test_minimal_sim_config_defaults_executors(tmp_path):
    (tmp_path / "world.json").write_text("{}", encoding="utf-8")
    toml = """
[task]
id = "sim-task"

[run]
sim_world = "world.json"
"""
    cfg = load_config(write_config(tmp_path, toml))
    assert cfg.executors[NodeKind.RED].argv == ("builtin:sim",)
    assert cfg.executors[NodeKind.BLACK].argv == ("builtin:sim",)
    assert cfg.sim_world == tmp_path / "world.json"
    assert cfg.task.direction == Direction.HIGHER_BETTER
    assert cfg.schedule.T == 40
    assert cfg.output_dir == tmp_path / "runs" / "latest"


def test_absolute_paths_kept(tmp_path):
    toml = f"""
[task]
id = "abs"

[run]
output_dir = "{tmp_path}/out"
sim_world = "{tmp_path}/w.json"
"""
    cfg = load_config(write_config(tmp_path / "sub" if (tmp_path / "sub").mkdir() is None else tmp_path, toml))
    assert cfg.output_dir == tmp_path / "out"
    assert cfg.sim_world == tmp_path / "w.json"


def test_overrides_win(tmp_path):
    path = write_config(tmp_path, FULL_TOML)
    cfg = load_config(
        path,
        overrides={
            "seed": 99,
            "rounds": 5,
            "parallelism": 2,
            "out": str(tmp_path / "elsewhere"),
            "wall_limit": 10.0,
        },
    )
    assert cfg.schedule.seed == 99
    assert cfg.schedule.T == 5
    assert cfg.schedule.parallelism == 2
    assert cfg.output_dir == tmp_path / "elsewhere"
    assert cfg.wall_limit == pytest.approx(10.0)


def test_apply_overrides_ignores_none(tmp_path):
    cfg = load_config(write_config(tmp_path, FULL_TOML))
    before = cfg.to_dict()
    apply_overrides(cfg, {"seed": None, "rounds": None, "out": None})
    assert cfg.to_dict() == before


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.toml")


def test_invalid_toml(tmp_path):
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(write_config(tmp_path, "[task\nid="))


def test_missing_task_table(tmp_path):
    with pytest.raises(ConfigError, match=r"\[task\] table"):
        load_config(write_config(tmp_path, "[schedule]\nT = 5\n"))


def test_missing_task_id(tmp_path):
    with pytest.raises(ConfigError, match="missing required key 'id'"):
        load_config(write_config(tmp_path, "[task]\ndescription = \"x\"\n"))


def test_unknown_direction(tmp_path):
    with pytest.raises(ConfigError, match="unknown direction"):
        load_config(write_config(tmp_path, "[task]\nid = \"x\"\ndirection = \"sideways\"\n"))


def test_bad_reward_bounds(tmp_path):
    with pytest.raises(ConfigError, match="reward_bounds"):
        load_config(write_config(tmp_path, "[task]\nid = \"x\"\nreward_bounds = [1.0]\n"))


def test_unknown_decay_kind(tmp_path):
    toml = "[task]\nid = \"x\"\n[schedule]\ndecay_kind = \"sawtooth\"\n"
    with pytest.raises(ConfigError, match="unknown decay_kind"):
        load_config(write_config(tmp_path, toml))


def test_unknown_controller(tmp_path):
    toml = "[task]\nid = \"x\"\n[schedule]\ncontroller = \"mystery\"\n"
    with pytest.raises(ConfigError, match="unknown controller"):
        load_config(write_config(tmp_path, toml))


def test_non_numeric_schedule_value(tmp_path):
    toml = "[task]\nid = \"x\"\n[schedule]\nT = \"many\"\n"
    with pytest.raises(ConfigError, match="schedule.T"):
        load_config(write_config(tmp_path, toml))


def test_missing_executors_rejected_at_validate(tmp_path):
    toml = "[task]\nid = \"x\"\n"
    with pytest.raises(ConfigError, match="no executor command"):
        load_config(write_config(tmp_path, toml))


def test_builtin_sim_needs_world(tmp_path):
    toml = """
[task]
id = "x"

[executors.red]
command = "builtin:sim"

[executors.black]
command = "builtin:sim"
"""
    with pytest.raises(ConfigError, match="sim_world"):
        load_config(write_config(tmp_path, toml))


def test_executor_command_shapes(tmp_path):
    toml = """
[task]
id = "x"

[executors.red]
command = 42

[executors.black]
command = "ok"
"""
    with pytest.raises(ConfigError, match="string or list"):
        load_config(write_config(tmp_path, toml))
    toml2 = """
[task]
id = "x"

[executors.red]
command = ""

[executors.black]
command = "ok"
"""
    with pytest.raises(ConfigError, match="command is empty"):
        load_config(write_config(tmp_path, toml2))


def test_bad_timeout(tmp_path):
    toml = """
[task]
id = "x"

[executors.red]
command = "ok"
timeout_seconds = -5

[executors.black]
command = "ok"
"""
    with pytest.raises(ConfigError, match="timeout_seconds"):
        load_config(write_config(tmp_path, toml))


def test_equal_gold_median_rejected(tmp_path):
    toml = """
[task]
id = "x"

[executors.red]
command = "ok"

[executors.black]
command = "ok"

[run]
gold_score = 0.5
median_score = 0.5
"""
    with pytest.raises(ConfigError, match="must differ"):
        load_config(write_config(tmp_path, toml))


def test_schedule_validation_surfaces_as_config_error(tmp_path):
    toml = """
[task]
id = "x"

[executors.red]
command = "ok"

[executors.black]
command = "ok"

[schedule]
T = 0
"""
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, toml))


def test_bad_initial_selection(tmp_path):
    toml = "[task]\nid = \"x\"\ninitial_selection = \"p0\"\n"
    with pytest.raises(ConfigError, match="initial_selection"):
        load_config(write_config(tmp_path, toml))
