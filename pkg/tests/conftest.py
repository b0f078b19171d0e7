"""Shared builders for tests that drive the orchestrator against the sim."""

from __future__ import annotations

from pathlib import Path

import pytest

from datatree.config import RunConfig
from datatree.executor import ExecutorConfig, TaskSpec
from datatree.scheduler import ScheduleConfig
from datatree.simenv import InProcessSimClient
from datatree.tree import Direction, NodeKind


def sim_run_config(base_dir, name="run", seed=0, T=20, **schedule_kw) -> RunConfig:
    ex = ExecutorConfig(argv=["builtin:sim"])
    return RunConfig(
        task=TaskSpec(task_id="sim-task", direction=Direction.HIGHER_BETTER),
        schedule=ScheduleConfig(T=T, seed=seed, **schedule_kw),
        executors={NodeKind.RED: ex, NodeKind.BLACK: ex},
        output_dir=Path(base_dir) / name,
        initial_state={"selection": []},
        sim_world=Path(base_dir) / "world-not-loaded.json",
        checkpoint_every=5,
    )


def sim_clients(world: dict) -> dict:
    client = InProcessSimClient(world)
    return {NodeKind.RED: client, NodeKind.BLACK: client}


@pytest.fixture
def run_cfg_factory(tmp_path):
    def make(name="run", seed=0, T=20, **schedule_kw):
        return sim_run_config(tmp_path, name=name, seed=seed, T=T, **schedule_kw)

    return make
