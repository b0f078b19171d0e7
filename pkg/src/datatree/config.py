"""Run configuration: TOML file loading, defaults, validation.

A config file only needs to name the task and the executor commands;
every schedule knob has a default. Validation problems raise
ConfigError, which the command line maps to its own exit code.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

from .executor import ExecutorConfig, TaskSpec
from .scheduler import CONTROLLERS, DECAY_KINDS, ScheduleConfig
from .tree import Direction, NodeKind


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    task: TaskSpec
    schedule: ScheduleConfig
    executors: dict[NodeKind, ExecutorConfig]
    output_dir: Path
    initial_state: dict = field(default_factory=dict)
    sim_world: Optional[Path] = None
    gold_score: Optional[float] = None
    median_score: Optional[float] = None
    checkpoint_every: int = 10
    wall_limit: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        self.task.validate()
        self.schedule.validate()
        for kind in (NodeKind.RED, NodeKind.BLACK):
            if kind not in self.executors:
                raise ConfigError(f"no executor command configured for {kind.value} nodes")
            if not self.executors[kind].argv:
                raise ConfigError(f"empty executor command for {kind.value} nodes")
            if self.executors[kind].argv[0] == "builtin:sim" and self.sim_world is None:
                raise ConfigError("builtin:sim executor requires run.sim_world")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.wall_limit is not None and self.wall_limit <= 0:
            raise ConfigError("wall_limit must be positive")
        if self.gold_score is not None and self.gold_score == self.median_score:
            raise ConfigError("gold and median scores must differ")

    def to_dict(self) -> dict:
        return {
            "task": self.task.to_dict(),
            "schedule": {
                "c0": self.schedule.c0,
                "c_min": self.schedule.c_min,
                "alpha": self.schedule.alpha,
                "p1": self.schedule.p1,
                "p2": self.schedule.p2,
                "epsilon": self.schedule.epsilon,
                "T": self.schedule.T,
                "gamma": self.schedule.gamma,
                "decay_kind": self.schedule.decay_kind,
                "num_red": self.schedule.num_red,
                "num_black": self.schedule.num_black,
                "max_black_per_red": self.schedule.max_black_per_red,
                "parallelism": self.schedule.parallelism,
                "seed": self.schedule.seed,
                "controller": self.schedule.controller,
            },
            "executors": {
                kind.value: {
                    "command": list(cfg.argv),
                    "timeout_seconds": cfg.timeout_seconds,
                }
                for kind, cfg in self.executors.items()
            },
            "output_dir": str(self.output_dir),
            "initial_state": self.initial_state,
            "sim_world": str(self.sim_world) if self.sim_world else None,
            "gold_score": self.gold_score,
            "median_score": self.median_score,
            "checkpoint_every": self.checkpoint_every,
            "wall_limit": self.wall_limit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        executors = {}
        for name, sub in d.get("executors", {}).items():
            executors[NodeKind(name)] = ExecutorConfig(
                argv=list(sub["command"]), timeout_seconds=sub.get("timeout_seconds")
            )
        cfg = cls(
            task=TaskSpec.from_dict(d["task"]),
            schedule=_schedule_from_table(d.get("schedule", {})),
            executors=executors,
            output_dir=Path(d["output_dir"]),
            initial_state=dict(d.get("initial_state", {})),
            sim_world=Path(d["sim_world"]) if d.get("sim_world") else None,
            gold_score=d.get("gold_score"),
            median_score=d.get("median_score"),
            checkpoint_every=int(d.get("checkpoint_every", 10)),
            wall_limit=d.get("wall_limit"),
        )
        cfg.validate()
        return cfg


def _require(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"missing required key '{key}' in [{section}]")
    return table[key]


def _task_from_table(table: dict) -> TaskSpec:
    direction_raw = table.get("direction", "higher_better")
    try:
        direction = Direction(direction_raw)
    except ValueError:
        raise ConfigError(f"unknown direction '{direction_raw}'") from None
    bounds = table.get("reward_bounds", [0.0, 1.0])
    if not isinstance(bounds, (list, tuple)) or len(bounds) != 2:
        raise ConfigError("reward_bounds must be a two-element list")
    return TaskSpec(
        task_id=str(_require(table, "id", "task")),
        description=str(table.get("description", "")),
        metric_name=str(table.get("metric", "score")),
        direction=direction,
        reward_bounds=(float(bounds[0]), float(bounds[1])),
        algorithm_ref=str(table.get("algorithm", "")),
        blocklist=[str(p) for p in table.get("blocklist", [])],
    )


def _schedule_from_table(table: dict) -> ScheduleConfig:
    cfg = ScheduleConfig()
    numeric = {
        "c0": float,
        "c_min": float,
        "alpha": float,
        "p1": float,
        "p2": float,
        "epsilon": float,
        "gamma": float,
        "T": int,
        "num_red": int,
        "num_black": int,
        "max_black_per_red": int,
        "parallelism": int,
        "seed": int,
    }
    for key, cast in numeric.items():
        if key in table:
            try:
                setattr(cfg, key, cast(table[key]))
            except (TypeError, ValueError):
                raise ConfigError(f"schedule.{key} must be a number") from None
    if "decay_kind" in table:
        kind = str(table["decay_kind"])
        if kind not in DECAY_KINDS:
            raise ConfigError(f"unknown decay_kind '{kind}' (choices: {', '.join(DECAY_KINDS)})")
        cfg.decay_kind = kind
    if "controller" in table:
        name = str(table["controller"])
        if name not in CONTROLLERS:
            raise ConfigError(f"unknown controller '{name}' (choices: {', '.join(sorted(CONTROLLERS))})")
        cfg.controller = name
    return cfg


def _argv_from_value(value, section: str) -> tuple[str, ...]:
    if isinstance(value, str):
        argv = tuple(shlex.split(value))
    elif isinstance(value, (list, tuple)):
        argv = tuple(str(part) for part in value)
    else:
        raise ConfigError(f"[{section}] command must be a string or list of strings")
    if not argv:
        raise ConfigError(f"[{section}] command is empty")
    return argv


def _executors_from_table(table: dict) -> dict[NodeKind, ExecutorConfig]:
    out: dict[NodeKind, ExecutorConfig] = {}
    for kind in (NodeKind.RED, NodeKind.BLACK):
        sub = table.get(kind.value)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"[executors.{kind.value}] must be a table")
        argv = _argv_from_value(_require(sub, "command", f"executors.{kind.value}"), f"executors.{kind.value}")
        timeout = sub.get("timeout_seconds")
        if timeout is not None:
            timeout = float(timeout)
            if timeout <= 0:
                raise ConfigError(f"executors.{kind.value}.timeout_seconds must be positive")
        out[kind] = ExecutorConfig(argv=argv, timeout_seconds=timeout)
    return out


def load_config(path: Path | str, overrides: Optional[dict] = None) -> RunConfig:
    """Parse a TOML run config; ``overrides`` wins over file values.

    Relative paths inside the file resolve against the file's directory.
    """
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None

    base_dir = path.resolve().parent
    task_table = raw.get("task")
    if not isinstance(task_table, dict):
        raise ConfigError("config needs a [task] table")
    task = _task_from_table(task_table)
    schedule = _schedule_from_table(raw.get("schedule", {}))

    executors_table = raw.get("executors", {})
    if not isinstance(executors_table, dict):
        raise ConfigError("[executors] must be a table")
    executors = _executors_from_table(executors_table)

    run_table = raw.get("run", {})
    output_dir = Path(run_table.get("output_dir", "runs/latest"))
    if not output_dir.is_absolute():
        output_dir = base_dir / output_dir

    sim_world = run_table.get("sim_world")
    if sim_world is not None:
        sim_world = Path(sim_world)
        if not sim_world.is_absolute():
            sim_world = base_dir / sim_world

    # A config that names a sim world but no executor commands runs
    # everything against the built-in simulated environment.
    if sim_world is not None:
        for kind in (NodeKind.RED, NodeKind.BLACK):
            executors.setdefault(kind, ExecutorConfig(argv=("builtin:sim",)))

    initial_selection = task_table.get("initial_selection", [])
    if not isinstance(initial_selection, (list, tuple)):
        raise ConfigError("task.initial_selection must be a list of entry ids")

    cfg = RunConfig(
        task=task,
        schedule=schedule,
        executors=executors,
        output_dir=output_dir,
        initial_state={"selection": [str(e) for e in initial_selection]},
        sim_world=sim_world,
        gold_score=_maybe_float(run_table, "gold_score"),
        median_score=_maybe_float(run_table, "median_score"),
        checkpoint_every=int(run_table.get("checkpoint_every", 10)),
        wall_limit=_maybe_float(run_table, "wall_limit"),
        metadata={"config_path": str(path.resolve())},
    )
    if overrides:
        apply_overrides(cfg, overrides)
    try:
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _maybe_float(table: dict, key: str) -> Optional[float]:
    value = table.get(key)
    return None if value is None else float(value)


def apply_overrides(cfg: RunConfig, overrides: dict) -> None:
    """Apply command line flags onto a loaded config."""
    if overrides.get("seed") is not None:
        cfg.schedule.seed = int(overrides["seed"])
    if overrides.get("rounds") is not None:
        cfg.schedule.T = int(overrides["rounds"])
    if overrides.get("parallelism") is not None:
        cfg.schedule.parallelism = int(overrides["parallelism"])
    if overrides.get("out") is not None:
        cfg.output_dir = Path(overrides["out"])
    if overrides.get("wall_limit") is not None:
        cfg.wall_limit = float(overrides["wall_limit"])