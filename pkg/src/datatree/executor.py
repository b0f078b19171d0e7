"""Node-execution boundary: child processes, budget ledger, outcomes.

Node work runs in a separate process speaking line-delimited JSON: the
client writes exactly one request line to the child's stdin and expects
one terminal response line on stdout. Anything else the child prints is
kept as progress notes. A crash, a timeout, or a malformed response
never raises into the search loop; it becomes a failed outcome worth
zero reward. Raw scores are mapped into [0, 1] reward space here, so
the scheduler never sees a task metric's direction.
"""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass, field
from typing import Optional

from .memory import DataStateDescriptor
from .pool import DataPool, PoolEntry, Provenance
from .scheduler import NodeOutcome, normalize_score
from .tree import CostRecord, Direction, NodeId, NodeKind, NodeStatus, Tree


class BudgetError(Exception):
    pass


@dataclass
class TaskSpec:
    task_id: str
    description: str = ""
    metric_name: str = "score"
    direction: Direction = Direction.HIGHER_BETTER
    reward_bounds: tuple[float, float] = (0.0, 1.0)
    algorithm_ref: str = ""
    blocklist: list[str] = field(default_factory=list)

    def validate(self) -> None:
        lower, upper = self.reward_bounds
        if lower >= upper:
            raise ValueError("reward bounds require lower < upper")
        if not self.task_id:
            raise ValueError("task_id must be non-empty")

    def normalized(self, raw: float) -> float:
        lower, upper = self.reward_bounds
        return normalize_score(raw, lower, upper, self.direction == Direction.HIGHER_BETTER)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "description": self.description,
            "metric_name": self.metric_name,
            "direction": self.direction.value,
            "reward_bounds": list(self.reward_bounds),
            "algorithm_ref": self.algorithm_ref,
            "blocklist": list(self.blocklist),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        spec = cls(
            task_id=d.get("task_id", ""),
            description=d.get("description", ""),
            metric_name=d.get("metric_name", "score"),
            direction=Direction(d.get("direction", "higher_better")),
            reward_bounds=tuple(d.get("reward_bounds", (0.0, 1.0))),
            algorithm_ref=d.get("algorithm_ref", ""),
            blocklist=list(d.get("blocklist", [])),
        )
        spec.validate()
        return spec


@dataclass
class BudgetLedger:
    """Rounds and wall time spent, plus the per-node cost book."""

    rounds_limit: int
    wall_limit: Optional[float] = None
    rounds_used: int = 0
    wall_seconds_used: float = 0.0
    per_node: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rounds_limit": self.rounds_limit,
            "wall_limit": self.wall_limit,
            "rounds_used": self.rounds_used,
            "wall_seconds_used": self.wall_seconds_used,
            "per_node": {v: c.to_dict() for v, c in sorted(self.per_node.items())},
        }


def budget_remaining(ledger: BudgetLedger) -> bool:
    if ledger.rounds_used >= ledger.rounds_limit:
        return False
    if ledger.wall_limit is not None and ledger.wall_seconds_used >= ledger.wall_limit:
        return False
    return True


def charge(ledger: BudgetLedger, v: NodeId, cost: CostRecord, count_round: bool = True) -> None:
    """Book one node's cost. Each node is charged exactly once.

    ``count_round`` is off only for the baseline evaluation, which
    spends wall time but is not one of the T search rounds.
    """
    if v in ledger.per_node:
        raise BudgetError(f"node {v} already charged")
    ledger.per_node[v] = cost
    ledger.wall_seconds_used += cost.wall_seconds
    if count_round:
        ledger.rounds_used += 1


# -- wire protocol --------------------------------------------------------


@dataclass
class ExecutorConfig:
    argv: list[str] = field(default_factory=list)
    timeout_seconds: Optional[float] = None  # None: derive from remaining budget

    def validate(self) -> None:
        if not self.argv:
            raise ValueError("executor argv must not be empty")
        if self.timeout_seconds is not None and self.timeout_seconds <= 0:
            raise ValueError("executor timeout must be positive")


def effective_timeout(cfg: ExecutorConfig, ledger: BudgetLedger, floor: float = 5.0) -> float:
    """Per-node timeout: configured value, else remaining wall over remaining rounds."""
    if cfg.timeout_seconds is not None:
        return cfg.timeout_seconds
    if ledger.wall_limit is None:
        return 120.0
    remaining_wall = max(0.0, ledger.wall_limit - ledger.wall_seconds_used)
    remaining_rounds = max(1, ledger.rounds_limit - ledger.rounds_used)
    return max(floor, remaining_wall / remaining_rounds)


@dataclass
class ExecutionRequest:
    v: NodeId
    kind: NodeKind
    task: TaskSpec
    context: list[dict]
    pool_manifest: str
    pool_watermark: int
    seed: str

    def to_wire(self) -> str:
        return json.dumps(
            {
                "v": self.v,
                "kind": self.kind.value,
                "task": self.task.to_dict(),
                "context": self.context,
                "pool_manifest": self.pool_manifest,
                "pool_watermark": self.pool_watermark,
                "seed": self.seed,
            },
            ensure_ascii=False,
        )


@dataclass
class ExecutionResult:
    """Raw outcome of one child process run, before interpretation."""

    v: NodeId
    ok: bool
    payload: dict
    cost: CostRecord
    error: str = ""  # "timeout", "crash: ...", "protocol: ..." on failure
    progress: list[str] = field(default_factory=list)


def _parse_cost(obj) -> Optional[CostRecord]:
    if not isinstance(obj, dict):
        return None
    try:
        return CostRecord(
            input_tokens=int(obj["input_tokens"]),
            output_tokens=int(obj["output_tokens"]),
            tool_calls=int(obj["tool_calls"]),
            wall_seconds=float(obj["wall_seconds"]),
        )
    except (KeyError, TypeError, ValueError):
        return None


def _payload_complaint(kind: NodeKind, payload) -> Optional[str]:
    if not isinstance(payload, dict):
        return "payload is not an object"
    if kind == NodeKind.RED:
        entries = payload.get("entries")
        if not isinstance(entries, list):
            return "discovery payload missing entries list"
        for entry in entries:
            if not isinstance(entry, dict) or not entry.get("source_pointer"):
                return "discovery entry missing source_pointer"
    else:
        state = payload.get("state")
        if not isinstance(state, dict) or not isinstance(state.get("selected_entries"), list):
            return "exploitation payload missing state.selected_entries"
        raw = payload.get("raw_score")
        if not isinstance(raw, (int, float)) or isinstance(raw, bool) or not math.isfinite(raw):
            return "exploitation payload missing finite raw_score"
    return None


class ExecutorClient:
    """Runs one request per child process, synchronously.

    Pure I/O plus parsing; safe to call from worker threads. All state
    mutation happens later, in the orchestrator's thread.
    """

    def __init__(self, cfg: ExecutorConfig):
        cfg.validate()
        self.cfg = cfg

    def run(self, request: ExecutionRequest, timeout: Optional[float] = None) -> ExecutionResult:
        if timeout is None:
            timeout = self.cfg.timeout_seconds if self.cfg.timeout_seconds else 120.0
        try:
            proc = subprocess.Popen(
                self.cfg.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
            )
        except OSError as exc:
            return _failure(request.v, f"crash: cannot spawn executor: {exc}")
        try:
            stdout, _stderr = proc.communicate(input=request.to_wire() + "\n", timeout=timeout)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.communicate()
            return _failure(request.v, "timeout")
        return _interpret_stdout(request, stdout, proc.returncode)


def _failure(v: NodeId, error: str) -> ExecutionResult:
    return ExecutionResult(v=v, ok=False, payload={}, cost=CostRecord(), error=error)


def _interpret_stdout(request: ExecutionRequest, stdout: str, returncode: int) -> ExecutionResult:
    terminal: Optional[dict] = None
    progress: list[str] = []
    for line in stdout.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            progress.append(line)
            continue
        if isinstance(obj, dict) and obj.get("v") == request.v and obj.get("status") in ("ok", "fail"):
            terminal = obj  # a later terminal line supersedes an earlier one
        else:
            progress.append(line)
    if terminal is None:
        if returncode != 0:
            return _failure(request.v, f"crash: exit code {returncode}")
        return _failure(request.v, "protocol: no terminal response")
    return interpret_response(request, terminal, progress)


def interpret_response(
    request: ExecutionRequest, obj, progress: Optional[list[str]] = None
) -> ExecutionResult:
    """Validate one decoded terminal response object.

    Shared by the subprocess path and in-process executors, so both
    enforce identical protocol rules.
    """
    progress = list(progress or [])
    if not isinstance(obj, dict) or obj.get("v") != request.v or obj.get("status") not in ("ok", "fail"):
        return _failure(request.v, "protocol: no terminal response")
    cost = _parse_cost(obj.get("cost"))
    if cost is None:
        return _failure(request.v, "protocol: missing or malformed cost")
    payload = obj.get("payload") if isinstance(obj.get("payload"), dict) else {}
    if obj["status"] == "fail":
        reason = str(payload.get("reason", "")) or "executor reported failure"
        return ExecutionResult(
            request.v, ok=False, payload=payload, cost=cost, error=reason, progress=progress
        )
    complaint = _payload_complaint(request.kind, payload)
    if complaint is not None:
        return _failure(request.v, f"protocol: {complaint}")
    return ExecutionResult(request.v, ok=True, payload=payload, cost=cost, progress=progress)


# -- outcome assembly -----------------------------------------------------


def _entry_draft(d: dict) -> PoolEntry:
    return PoolEntry(
        id="",
        source_pointer=d.get("source_pointer", ""),
        description=d.get("description", ""),
        format=d.get("format", ""),
        schema_summary=d.get("schema_summary", ""),
        metadata=dict(d.get("metadata", {})),
        scale=int(d.get("scale", 0)),
        modality=d.get("modality", ""),
        task_relevance=d.get("task_relevance", ""),
        screening_notes=d.get("screening_notes", ""),
        provenance=Provenance.from_dict(d.get("provenance", {})),
    )


def finalize_execution(
    tree: Tree,
    ledger: BudgetLedger,
    pool: DataPool,
    task: TaskSpec,
    v: NodeId,
    result: ExecutionResult,
    count_round: bool = True,
) -> NodeOutcome:
    """Apply one finished execution to tree, pool, and ledger.

    Single-writer step: call only from the orchestration loop. The
    failure paths and the success paths converge on exactly one
    completed node, one ledger charge, and one NodeOutcome.
    """
    node = tree.node(v)
    baseline = node.kind == NodeKind.INITIAL
    diagnostics: dict = {}
    if result.progress:
        diagnostics["progress"] = list(result.progress)

    if not result.ok:
        diagnostics["error"] = result.error
        if not baseline:
            # The initial node keeps its succeeded status; a failed
            # baseline evaluation is the orchestrator's problem.
            tree.complete(v, NodeStatus.FAILED, result.cost)
        charge(ledger, v, result.cost, count_round)
        return NodeOutcome(node=v, result="failed", diagnostics=diagnostics)

    if node.kind == NodeKind.RED:
        drafts = [_entry_draft(d) for d in result.payload.get("entries", [])]
        added, notes = pool.append_entries(drafts, v, NodeKind.RED)
        if notes:
            diagnostics["pool_notes"] = notes
        payload_diag = result.payload.get("diagnostics", {})
        if isinstance(payload_diag, dict):
            diagnostics.update(payload_diag)
        tree.complete(v, NodeStatus.SUCCEEDED, result.cost)
        charge(ledger, v, result.cost, count_round)
        return NodeOutcome(
            node=v, result="red_success", delta_pool_ids=tuple(added), diagnostics=diagnostics
        )

    # Black, including the baseline evaluation routed through the black executor.
    state = DataStateDescriptor.from_dict(result.payload["state"])
    try:
        state.validate(pool)
    except ValueError as exc:
        diagnostics["error"] = f"protocol: {exc}"
        if not baseline:
            tree.complete(v, NodeStatus.FAILED, result.cost)
        charge(ledger, v, result.cost, count_round)
        return NodeOutcome(node=v, result="failed", diagnostics=diagnostics)
    raw = float(result.payload["raw_score"])
    payload_diag = result.payload.get("diagnostics", {})
    if isinstance(payload_diag, dict):
        diagnostics.update(payload_diag)
    if baseline:
        tree.attach_initial_result(raw, result.cost)
    else:
        tree.complete(v, NodeStatus.SUCCEEDED, result.cost, raw_score=raw)
    charge(ledger, v, result.cost, count_round)
    return NodeOutcome(
        node=v,
        result="black_scored",
        normalized_reward=task.normalized(raw),
        raw_score=raw,
        state=state.to_dict(),
        diagnostics=diagnostics,
    )


def execute_node(
    tree: Tree,
    ledger: BudgetLedger,
    pool: DataPool,
    clients: dict,
    task: TaskSpec,
    v: NodeId,
    context: list[dict],
    pool_manifest: str,
    pool_watermark: int,
    seed: str,
    count_round: bool = True,
    timeout: Optional[float] = None,
) -> NodeOutcome:
    """Run one pending node start to finish (the serial path)."""
    if count_round and not budget_remaining(ledger):
        raise BudgetError("budget exhausted; no new executions may start")
    node = tree.node(v)
    # The baseline evaluation reuses the black executor; kind stays
    # black on the wire and the initial node never leaves succeeded.
    wire_kind = NodeKind.BLACK if node.kind == NodeKind.INITIAL else node.kind
    client = clients[wire_kind]
    if node.kind != NodeKind.INITIAL:
        tree.mark_running(v)
    request = ExecutionRequest(
        v=v,
        kind=wire_kind,
        task=task,
        context=context,
        pool_manifest=pool_manifest,
        pool_watermark=pool_watermark,
        seed=seed,
    )
    result = client.run(request, timeout=timeout)
    return finalize_execution(tree, ledger, pool, task, v, result, count_round)