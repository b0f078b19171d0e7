"""Run loop tying tree, scheduler, pool, memory, and executors together.

A run lives in one directory: the event log is the authoritative
record, the pool manifest and memory store are convenience exports kept
current, and the report is derived at the end. Resuming replays the log
into fresh state and picks the loop back up; a node that was started
but never completed simply returns to the frontier, because replay only
applies completions.

All mutation happens on the orchestrator thread. With parallelism above
one, worker threads only run the executor I/O; their results queue up
and are applied here, in submission order within each wait batch.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .analytics import bias_series_from_events, build_report
from .config import RunConfig
from .events import EventLog, read_events
from .executor import (
    BudgetLedger,
    ExecutionRequest,
    ExecutorClient,
    budget_remaining,
    charge,
    effective_timeout,
    execute_node,
    finalize_execution,
)
from .memory import DataStateDescriptor, GlobalMemory, MemoryRecord
from .pool import DataPool, PoolEntry
from .scheduler import (
    BranchStats,
    BranchSummary,
    backpropagate,
    controller_decide,
    exploration_coefficient,
    grow,
    reward,
    select_next,
)
from .simenv import InProcessSimClient
from .tree import CostRecord, NodeKind, NodeStatus, Tree, create_tree

EVENTS_FILE = "events.jsonl"
MANIFEST_FILE = "pool.jsonl"
MEMORY_FILE = "memory.jsonl"
RUN_FILE = "run.json"
SNAPSHOT_FILE = "snapshot.json"
REPORT_FILE = "report.json"
BIAS_FILE = "bias.csv"
LOCK_FILE = "LOCK"


class OrchestratorError(Exception):
    pass


class LockError(OrchestratorError):
    pass


class BaselineError(OrchestratorError):
    """The baseline evaluation failed; nothing sensible can follow."""


def node_seed(run_seed: int, node_id: str) -> str:
    """Stable per-node executor seed, independent of scheduling order."""
    return hashlib.sha256(f"{run_seed}:{node_id}".encode("utf-8")).hexdigest()


def build_clients(cfg: RunConfig) -> dict:
    """Executor clients per node kind; ``builtin:sim`` runs in process."""
    clients = {}
    sim_client = None
    for kind, exec_cfg in cfg.executors.items():
        if exec_cfg.argv and exec_cfg.argv[0] == "builtin:sim":
            if cfg.sim_world is None:
                raise OrchestratorError("builtin:sim executor requires a sim world file")
            if sim_client is None:
                sim_client = InProcessSimClient(cfg.sim_world)
            clients[kind] = sim_client
        else:
            clients[kind] = ExecutorClient(exec_cfg)
    return clients


# A selector takes (tree, stats, t, cfg, frontier) and returns a node id.
SelectFn = Callable


@dataclass
class RunState:
    cfg: RunConfig
    run_dir: Path
    tree: Tree
    stats: BranchStats
    pool: DataPool
    memory: GlobalMemory
    ledger: BudgetLedger
    t: int = 0
    stopped_early: bool = False
    report: Optional[dict] = None

    @property
    def events_path(self) -> Path:
        return self.run_dir / EVENTS_FILE


def fingerprint(state: RunState) -> dict:
    """Deterministic digest of everything the search decided.

    Two runs of the same config must produce equal fingerprints, and a
    killed-then-resumed run must match an uninterrupted one. Wall-clock
    values never enter: all times come from executor cost reports.
    """
    nodes = []
    for node in sorted(state.tree.nodes(), key=lambda n: n.seq):
        nodes.append(
            {
                "id": node.id,
                "kind": node.kind.value,
                "parent": node.parent,
                "status": node.status.value,
                "round": node.created_round,
                "cost": node.cost.to_dict() if node.cost else None,
                "raw_score": node.raw_score,
            }
        )
    return {
        "nodes": nodes,
        "stats": state.stats.to_dict(),
        "pool": [e.to_dict() for e in state.pool.entries()],
        "memory": [r.to_dict() for r in state.memory.records()],
        "ledger": state.ledger.to_dict(),
        "t": state.t,
    }


class _RunLock:
    """One writer per run directory, marked by a pid file."""

    def __init__(self, run_dir: Path):
        self.path = run_dir / LOCK_FILE

    def __enter__(self) -> "_RunLock":
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(
                f"run directory is locked by another writer ({self.path}); "
                "remove the LOCK file if that run is dead"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc) -> None:
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass


# -- shared helpers --------------------------------------------------------


def _initial_descriptor(cfg: RunConfig) -> DataStateDescriptor:
    state = cfg.initial_state or {}
    return DataStateDescriptor(
        state_id="initial",
        selected_entries=tuple(state.get("selection", [])),
        loader_artifact=str(state.get("loader_artifact", "")),
    )


def _append_manifest_rows(path: Path, pool: DataPool, start: int) -> int:
    """Flush pool entries [start, watermark) to the manifest file."""
    end = pool.watermark
    if end > start:
        with open(path, "a", encoding="utf-8") as fh:
            for entry in list(pool.entries())[start:end]:
                fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")
    return end


def _write_memory_store(path: Path, memory: GlobalMemory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in memory.records():
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def _record_for_outcome(outcome, node_kind: NodeKind) -> MemoryRecord:
    if node_kind == NodeKind.RED:
        return MemoryRecord(
            node=outcome.node,
            kind="red",
            delta_pool_ids=tuple(outcome.delta_pool_ids),
            diagnostics=dict(outcome.diagnostics),
        )
    state = DataStateDescriptor.from_dict(outcome.state) if outcome.state else None
    return MemoryRecord(
        node=outcome.node,
        kind="black",
        data_state=state,
        score=outcome.raw_score if outcome.result == "black_scored" else None,
        diagnostics=dict(outcome.diagnostics),
    )


class _Loop:
    """Mutable run state plus the event plumbing around each completion."""

    def __init__(self, cfg: RunConfig, run_dir: Path, clients: dict, log: EventLog):
        self.cfg = cfg
        self.run_dir = run_dir
        self.clients = clients
        self.log = log
        self.pool = DataPool(blocklist=list(cfg.task.blocklist))
        self.memory = GlobalMemory()
        self.stats = BranchStats()
        self.ledger = BudgetLedger(rounds_limit=cfg.schedule.T, wall_limit=cfg.wall_limit)
        self.tree: Optional[Tree] = None
        self.t = 0
        self.manifest_flushed = 0
        self.best_seen: Optional[float] = None  # raw score bar for findings

    @property
    def manifest_path(self) -> Path:
        return self.run_dir / MANIFEST_FILE

    def state(self, stopped_early: bool = False) -> RunState:
        return RunState(
            cfg=self.cfg,
            run_dir=self.run_dir,
            tree=self.tree,
            stats=self.stats,
            pool=self.pool,
            memory=self.memory,
            ledger=self.ledger,
            t=self.t,
            stopped_early=stopped_early,
        )

    # -- baseline ---------------------------------------------------------

    def bootstrap(self) -> None:
        # The token pins node ids, and ids seed the executors; a fresh
        # run of the same config must mint the same ids end to end.
        self.tree = create_tree(
            self.cfg.task.description or self.cfg.task.task_id,
            self.cfg.initial_state,
            pool=self.pool,
            token=f"s{self.cfg.schedule.seed}",
        )
        root = self.tree.root_id
        self.log.append(
            "node_added",
            {"node_id": root, "kind": NodeKind.INITIAL.value, "parent": None, "round": 0},
        )
        self.manifest_path.write_text("", encoding="utf-8")

        descriptor = _initial_descriptor(self.cfg)
        context = [
            {
                "node": root,
                "kind": "black",
                "data_state": descriptor.to_dict(),
                "diagnostics": {"initial": True},
                "findings": [],
            }
        ]
        outcome = self._execute(root, context, count_round=False)
        if outcome.result != "black_scored":
            raise BaselineError(
                f"baseline evaluation failed: {outcome.diagnostics.get('error', 'unknown error')}"
            )
        self._log_completion(root, outcome, count_round=False)
        record = MemoryRecord(
            node=root,
            kind="black",
            data_state=descriptor,
            score=outcome.raw_score,
            diagnostics={"initial": True},
        )
        self.memory.write_record(record)
        self.log.append("memory_write", {"record": record.to_dict()})
        self.best_seen = outcome.raw_score
        self._grow_at(root)

    # -- per-node plumbing -------------------------------------------------

    def _execute(self, v: str, context: list[dict], count_round: bool = True):
        node = self.tree.node(v)
        wire_kind = NodeKind.BLACK if node.kind == NodeKind.INITIAL else node.kind
        timeout = None
        client = self.clients[wire_kind]
        if isinstance(client, ExecutorClient):
            timeout = effective_timeout(client.cfg, self.ledger)
        return execute_node(
            self.tree,
            self.ledger,
            self.pool,
            self.clients,
            self.cfg.task,
            v,
            context,
            str(self.manifest_path),
            self.pool.watermark,
            node_seed(self.cfg.schedule.seed, v),
            count_round=count_round,
            timeout=timeout,
        )

    def _log_completion(self, v: str, outcome, count_round: bool) -> None:
        node = self.tree.node(v)
        if outcome.delta_pool_ids:
            entries = [self.pool.get(eid).to_dict() for eid in outcome.delta_pool_ids]
            self.log.append("pool_append", {"node_id": v, "entries": entries})
            self.manifest_flushed = _append_manifest_rows(
                self.manifest_path, self.pool, self.manifest_flushed
            )
        self.log.append(
            "node_completed",
            {
                "node_id": v,
                "status": node.status.value,
                "result": outcome.result,
                "cost": node.cost.to_dict() if node.cost else None,
                "raw_score": node.raw_score,
                "error": outcome.diagnostics.get("error"),
                "counts_round": count_round,
            },
        )
        self.log.append(
            "budget_update",
            {
                "rounds_used": self.ledger.rounds_used,
                "rounds_limit": self.ledger.rounds_limit,
                "wall_seconds_used": round(self.ledger.wall_seconds_used, 6),
                "wall_limit": self.ledger.wall_limit,
            },
        )

    def apply_completion(self, v: str, outcome) -> None:
        """Everything that happens after one search node finishes."""
        node = self.tree.node(v)
        self._log_completion(v, outcome, count_round=True)

        record = _record_for_outcome(outcome, node.kind)
        self.memory.write_record(record)
        self.log.append("memory_write", {"record": record.to_dict()})

        r = reward(outcome, self.cfg.schedule)
        backpropagate(self.tree, self.stats, v, r)
        self.log.append("reward_backprop", {"node_id": v, "reward": r})

        self.t += 1
        self.log.append(
            "decay_step",
            {"t": self.t, "c": exploration_coefficient(self.t, self.cfg.schedule)},
        )

        if outcome.result == "black_scored":
            raw = outcome.raw_score
            if self.best_seen is None or self.cfg.task.direction.better(raw, self.best_seen):
                self.best_seen = raw
                text = f"new best {self.cfg.task.metric_name} {raw:.6f} at {v}"
                self.memory.append_finding(v, text)
                self.log.append("finding", {"node_id": v, "text": text})

        self._grow_at(v)

    def _grow_at(self, v: str) -> None:
        node = self.tree.node(v)
        decision = None
        if node.kind == NodeKind.BLACK:
            decision = controller_decide(self._branch_summary(v), self.cfg.schedule)
        result = grow(self.tree, v, decision, self.cfg.schedule, t=self.t)
        for child in result.added:
            child_node = self.tree.node(child)
            data = {
                "node_id": child,
                "kind": child_node.kind.value,
                "parent": child_node.parent,
                "round": child_node.created_round,
            }
            if result.decision_applied is not None:
                data["decision"] = result.decision_applied.value
            if result.note:
                data["note"] = result.note
            self.log.append("node_added", data)

    def _branch_summary(self, v: str) -> BranchSummary:
        node = self.tree.node(v)
        red_anc = self.tree.nearest_red_ancestor(v)
        last = None
        if node.status == NodeStatus.SUCCEEDED and node.raw_score is not None:
            last = self.cfg.task.normalized(node.raw_score)
        best_before = None
        used = 0
        cap = self.cfg.schedule.max_black_per_red
        if red_anc is not None:
            for child in self.tree.children(red_anc):
                sibling = self.tree.node(child)
                if sibling.kind != NodeKind.BLACK:
                    continue
                used += 1
                if child == v or sibling.raw_score is None:
                    continue
                if sibling.status == NodeStatus.SUCCEEDED:
                    score = self.cfg.task.normalized(sibling.raw_score)
                    if best_before is None or score > best_before:
                        best_before = score
        else:
            used = cap  # no discovery ancestor: deepening has nowhere to go
        return BranchSummary(last_reward=last, best_before=best_before, quota_used=used, quota_cap=cap)

    def checkpoint(self) -> None:
        _write_memory_store(self.run_dir / MEMORY_FILE, self.memory)
        snapshot = {"next_seq": self.log.next_seq, "state": fingerprint(self.state())}
        tmp = self.run_dir / (SNAPSHOT_FILE + ".tmp")
        tmp.write_text(json.dumps(snapshot, ensure_ascii=False, indent=2), encoding="utf-8")
        tmp.replace(self.run_dir / SNAPSHOT_FILE)

    def finalize(self) -> dict:
        self.checkpoint()
        events = read_events(str(self.run_dir / EVENTS_FILE))
        report = build_report(
            self.tree,
            self.cfg.task.direction,
            events=events,
            gold=self.cfg.gold_score,
            median=self.cfg.median_score,
        ).to_dict()
        report["rounds_used"] = self.ledger.rounds_used
        report["wall_seconds_used"] = round(self.ledger.wall_seconds_used, 6)
        (self.run_dir / REPORT_FILE).write_text(
            json.dumps(report, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        with open(self.run_dir / BIAS_FILE, "w", encoding="utf-8") as fh:
            fh.write("t,bias\n")
            for t, bias in bias_series_from_events(events):
                fh.write(f"{t},{'' if bias is None else f'{bias:.6f}'}\n")
        return report


# -- the loop itself -------------------------------------------------------


def _search(
    loop: _Loop,
    kill_after: Optional[Callable[[int], bool]],
    select_fn: Optional[SelectFn],
) -> bool:
    """Run search rounds until budget or frontier runs out.

    Returns True when the run was stopped by the kill switch.
    """
    pick = select_fn if select_fn is not None else select_next
    parallelism = max(1, loop.cfg.schedule.parallelism)
    completions = 0

    if parallelism == 1:
        while budget_remaining(loop.ledger):
            v = pick(loop.tree, loop.stats, loop.t, loop.cfg.schedule, loop.tree.pending())
            if v is None:
                break
            loop.log.append("node_started", _start_data(loop, v))
            context = [r.to_dict() for r in loop.memory.default_context(loop.tree, v)]
            outcome = loop._execute(v, context)
            loop.apply_completion(v, outcome)
            completions += 1
            if completions % loop.cfg.checkpoint_every == 0:
                loop.checkpoint()
            if kill_after is not None and kill_after(completions):
                return True
        return False

    # Parallel path: workers only run executor I/O; results are applied
    # here in submission order within each completed batch.
    submit_index: dict = {}
    futures: dict = {}
    counter = 0
    stop = False
    with concurrent.futures.ThreadPoolExecutor(max_workers=parallelism) as tpe:
        while True:
            while not stop and len(futures) < parallelism:
                if loop.ledger.rounds_used + len(futures) >= loop.ledger.rounds_limit:
                    break
                if (
                    loop.ledger.wall_limit is not None
                    and loop.ledger.wall_seconds_used >= loop.ledger.wall_limit
                ):
                    break
                v = pick(loop.tree, loop.stats, loop.t, loop.cfg.schedule, loop.tree.pending())
                if v is None:
                    break
                loop.log.append("node_started", _start_data(loop, v))
                loop.tree.mark_running(v)
                context = [r.to_dict() for r in loop.memory.default_context(loop.tree, v)]
                node = loop.tree.node(v)
                client = loop.clients[node.kind]
                timeout = None
                if isinstance(client, ExecutorClient):
                    timeout = effective_timeout(client.cfg, loop.ledger)
                request = ExecutionRequest(
                    v=v,
                    kind=node.kind,
                    task=loop.cfg.task,
                    context=context,
                    pool_manifest=str(loop.manifest_path),
                    pool_watermark=loop.pool.watermark,
                    seed=node_seed(loop.cfg.schedule.seed, v),
                )
                fut = tpe.submit(client.run, request, timeout)
                futures[fut] = v
                submit_index[fut] = counter
                counter += 1
            if not futures:
                break
            done, _ = concurrent.futures.wait(
                futures, return_when=concurrent.futures.FIRST_COMPLETED
            )
            for fut in sorted(done, key=lambda f: submit_index[f]):
                v = futures.pop(fut)
                submit_index.pop(fut)
                result = fut.result()
                outcome = finalize_execution(
                    loop.tree, loop.ledger, loop.pool, loop.cfg.task, v, result
                )
                loop.apply_completion(v, outcome)
                completions += 1
                if completions % loop.cfg.checkpoint_every == 0:
                    loop.checkpoint()
                if kill_after is not None and kill_after(completions):
                    stop = True
            if stop:
                # Abandon in-flight work; replay will re-queue those nodes.
                for fut in futures:
                    fut.cancel()
                return True
    return False


def _start_data(loop: _Loop, v: str) -> dict:
    # Selection audit data: enough to check later that no visited node
    # jumped the queue while unvisited frontier nodes were waiting.
    unvisited = sum(1 for p in loop.tree.pending() if loop.stats.visits(p) == 0)
    return {
        "node_id": v,
        "t": loop.t,
        "picked_visits": loop.stats.visits(v),
        "frontier_unvisited": unvisited,
    }


def run(
    cfg: RunConfig,
    run_dir: Optional[Path] = None,
    clients: Optional[dict] = None,
    kill_after: Optional[Callable[[int], bool]] = None,
    select_fn: Optional[SelectFn] = None,
) -> RunState:
    """Execute a fresh run into ``run_dir`` (default: cfg.output_dir)."""
    cfg.validate()
    run_dir = Path(run_dir if run_dir is not None else cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    events_path = run_dir / EVENTS_FILE
    if events_path.exists() and events_path.stat().st_size > 0:
        raise OrchestratorError(
            f"{events_path} already has events; use resume() to continue that run"
        )
    if clients is None:
        clients = build_clients(cfg)
    (run_dir / RUN_FILE).write_text(
        json.dumps(cfg.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    with _RunLock(run_dir):
        with EventLog(str(events_path)) as log:
            loop = _Loop(cfg, run_dir, clients, log)
            loop.bootstrap()
            stopped = _search(loop, kill_after, select_fn)
            state = loop.state(stopped_early=stopped)
            if not stopped:
                state.report = loop.finalize()
            else:
                loop.checkpoint()
    return state


# -- replay and resume -----------------------------------------------------


def replay(run_dir: Path, cfg: Optional[RunConfig] = None) -> _Loop:
    """Rebuild in-memory state from the event log alone.

    Started-but-unfinished nodes come back pending. The returned loop
    has no event writer attached; resume() adds one.
    """
    run_dir = Path(run_dir)
    if cfg is None:
        cfg = RunConfig.from_dict(json.loads((run_dir / RUN_FILE).read_text(encoding="utf-8")))
    events = read_events(str(run_dir / EVENTS_FILE))
    loop = _Loop(cfg, run_dir, clients={}, log=None)
    tree = Tree(token="replay")
    loop.tree = tree
    for event in events:
        data = event.data
        if event.kind == "node_added":
            tree.restore_node(
                data["node_id"],
                NodeKind(data["kind"]),
                data.get("parent"),
                int(data.get("round", 0)),
            )
            if NodeKind(data["kind"]) == NodeKind.INITIAL:
                tree.task = cfg.task.description or cfg.task.task_id
                tree.initial_state = dict(cfg.initial_state)
        elif event.kind == "node_completed":
            v = data["node_id"]
            node = tree.node(v)
            cost = CostRecord.from_dict(data["cost"]) if data.get("cost") else CostRecord()
            if node.kind == NodeKind.INITIAL:
                tree.attach_initial_result(data["raw_score"], cost)
            else:
                if node.status == NodeStatus.PENDING:
                    tree.mark_running(v)
                tree.complete(v, NodeStatus(data["status"]), cost, raw_score=data.get("raw_score"))
            charge(loop.ledger, v, cost, count_round=bool(data.get("counts_round", True)))
        elif event.kind == "pool_append":
            for entry in data.get("entries", []):
                loop.pool.append_restored(PoolEntry.from_dict(entry))
        elif event.kind == "memory_write":
            loop.memory.write_record(MemoryRecord.from_dict(data["record"]))
        elif event.kind == "finding":
            loop.memory.append_finding(data["node_id"], data["text"])
        elif event.kind == "reward_backprop":
            backpropagate(loop.tree, loop.stats, data["node_id"], float(data["reward"]))
        elif event.kind == "decay_step":
            loop.t = int(data["t"])
        # node_started and budget_update carry no replayable state.
    root = tree.node(tree.root_id)
    if root.raw_score is not None:
        best = root.raw_score
        for node in tree.nodes():
            if (
                node.kind == NodeKind.BLACK
                and node.status == NodeStatus.SUCCEEDED
                and node.raw_score is not None
                and cfg.task.direction.better(node.raw_score, best)
            ):
                best = node.raw_score
        loop.best_seen = best
    return loop


def resume(
    run_dir: Path,
    cfg: Optional[RunConfig] = None,
    clients: Optional[dict] = None,
    kill_after: Optional[Callable[[int], bool]] = None,
    select_fn: Optional[SelectFn] = None,
) -> RunState:
    """Continue an interrupted run to its natural end."""
    run_dir = Path(run_dir)
    loop = replay(run_dir, cfg)
    if clients is None:
        clients = build_clients(loop.cfg)
    loop.clients = clients
    with _RunLock(run_dir):
        # Rebuild the manifest so executors see exactly the replayed pool.
        loop.pool.write_manifest(str(loop.manifest_path))
        loop.manifest_flushed = loop.pool.watermark
        with EventLog.resume(str(run_dir / EVENTS_FILE)) as log:
            loop.log = log
            stopped = _search(loop, kill_after, select_fn)
            state = loop.state(stopped_early=stopped)
            if not stopped:
                state.report = loop.finalize()
            else:
                loop.checkpoint()
    return state


def status_summary(run_dir: Path) -> dict:
    """What the run directory says happened so far."""
    loop = replay(Path(run_dir))
    tree = loop.tree
    by_status = {s.value: c for s, c in tree.counts_by_status().items()}
    by_kind = {k.value: c for k, c in tree.counts_by_kind().items()}
    root = tree.node(tree.root_id)
    best_id = tree.best_black_node(loop.cfg.task.direction)
    frontier = len(tree.pending())
    done = loop.ledger.rounds_used >= loop.ledger.rounds_limit or frontier == 0
    return {
        "task": loop.cfg.task.task_id,
        "nodes": len(tree),
        "by_kind": by_kind,
        "by_status": by_status,
        "rounds_used": loop.ledger.rounds_used,
        "rounds_limit": loop.ledger.rounds_limit,
        "wall_seconds_used": round(loop.ledger.wall_seconds_used, 6),
        "wall_limit": loop.ledger.wall_limit,
        "pool_entries": len(loop.pool),
        "memory_records": len(loop.memory),
        "initial_score": root.raw_score,
        "best_score": tree.node(best_id).raw_score if best_id else None,
        "frontier": frontier,
        "complete": done,
    }