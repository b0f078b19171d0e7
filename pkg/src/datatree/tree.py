"""Search tree over executable data states.

The tree holds one initial node (the root, carrying the baseline data
state) plus red nodes (external-data discovery) and black nodes (data
exploitation scored by downstream feedback). Edges always point from
parent to child and never form cycles; nodes are immutable once they
reach a terminal status.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

NodeId = str

_TREE_TOKENS = itertools.count(1)


class TreeError(Exception):
    """Structural violation or bad node reference."""


class UnknownNodeError(TreeError):
    def __init__(self, node_id: NodeId):
        super().__init__(f"unknown node id: {node_id!r}")
        self.node_id = node_id


class NodeKind(str, Enum):
    INITIAL = "initial"
    RED = "red"
    BLACK = "black"


class NodeStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


class Direction(str, Enum):
    """Whether larger or smaller raw scores are better for the task metric."""

    HIGHER_BETTER = "higher_better"
    LOWER_BETTER = "lower_better"

    def better(self, a: float, b: float) -> bool:
        """True iff raw score ``a`` is strictly better than ``b``."""
        return a > b if self is Direction.HIGHER_BETTER else a < b


# Only forward transitions are legal; terminal states are frozen.
_ALLOWED_TRANSITIONS = {
    NodeStatus.PENDING: {NodeStatus.RUNNING},
    NodeStatus.RUNNING: {NodeStatus.SUCCEEDED, NodeStatus.FAILED},
    NodeStatus.SUCCEEDED: set(),
    NodeStatus.FAILED: set(),
}


@dataclass(frozen=True)
class CostRecord:
    """Per-node resource usage, fixed once the node completes."""

    input_tokens: int = 0
    output_tokens: int = 0
    tool_calls: int = 0
    wall_seconds: float = 0.0

    def __post_init__(self) -> None:
        for name in ("input_tokens", "output_tokens", "tool_calls", "wall_seconds"):
            if getattr(self, name) < 0:
                raise ValueError(f"cost field {name} must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "tool_calls": self.tool_calls,
            "wall_seconds": self.wall_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostRecord":
        return cls(
            input_tokens=int(d.get("input_tokens", 0)),
            output_tokens=int(d.get("output_tokens", 0)),
            tool_calls=int(d.get("tool_calls", 0)),
            wall_seconds=float(d.get("wall_seconds", 0.0)),
        )


@dataclass
class Node:
    id: NodeId
    kind: NodeKind
    parent: Optional[NodeId]
    status: NodeStatus
    created_round: int
    seq: int  # creation order within the tree, used for deterministic ties
    cost: Optional[CostRecord] = None
    raw_score: Optional[float] = None

    @property
    def completed(self) -> bool:
        return self.status in (NodeStatus.SUCCEEDED, NodeStatus.FAILED)


class Tree:
    """The search tree: node lifecycle, navigation, and structural invariants.

    All mutation goes through a single writer (the orchestration loop);
    reads are safe whenever no write is in flight.
    """

    def __init__(self, token: Optional[str] = None):
        self._token = token if token is not None else f"t{next(_TREE_TOKENS)}"
        self._next_seq = 0
        self._nodes: dict[NodeId, Node] = {}
        self._children: dict[NodeId, list[NodeId]] = {}
        self._root_id: Optional[NodeId] = None
        self.task: str = ""
        self.initial_state: dict = {}

    # -- construction -----------------------------------------------------

    @property
    def token(self) -> str:
        return self._token

    @property
    def root_id(self) -> NodeId:
        if self._root_id is None:
            raise TreeError("tree has no root")
        return self._root_id

    def _mint_id(self) -> NodeId:
        node_id = f"{self._token}.n{self._next_seq}"
        return node_id

    def _insert(self, node: Node) -> None:
        self._nodes[node.id] = node
        self._children[node.id] = []
        if node.parent is not None:
            self._children[node.parent].append(node.id)
        self._next_seq = node.seq + 1

    def add_initial(self) -> NodeId:
        """Create the root. Used by ``create_tree``; exactly one per tree."""
        if self._root_id is not None:
            raise TreeError("tree already has an initial node")
        node = Node(
            id=self._mint_id(),
            kind=NodeKind.INITIAL,
            parent=None,
            status=NodeStatus.SUCCEEDED,
            created_round=0,
            seq=self._next_seq,
        )
        self._insert(node)
        self._root_id = node.id
        return node.id

    def add_node(self, kind: NodeKind, parent: NodeId, created_round: int = 0) -> NodeId:
        """Add a pending red or black node under ``parent``."""
        if kind == NodeKind.INITIAL:
            raise TreeError("only one initial node is allowed; add red or black nodes")
        if parent not in self._nodes:
            raise UnknownNodeError(parent)
        node = Node(
            id=self._mint_id(),
            kind=kind,
            parent=parent,
            status=NodeStatus.PENDING,
            created_round=created_round,
            seq=self._next_seq,
        )
        self._insert(node)
        return node.id

    def restore_node(
        self,
        node_id: NodeId,
        kind: NodeKind,
        parent: Optional[NodeId],
        created_round: int,
    ) -> None:
        """Re-create a node with an explicit id during event-log replay.

        Ids are expected to arrive in their original creation order so
        that seq numbers and the id counter line up with the live run.
        """
        if node_id in self._nodes:
            raise TreeError(f"duplicate node id in replay: {node_id}")
        token, _, suffix = node_id.rpartition(".n")
        if not suffix.isdigit():
            raise TreeError(f"malformed node id in replay: {node_id}")
        if kind == NodeKind.INITIAL:
            if self._root_id is not None or parent is not None:
                raise TreeError("replayed initial node conflicts with existing root")
            self._token = token
        elif parent is None or parent not in self._nodes:
            raise UnknownNodeError(parent if parent is not None else "<missing>")
        node = Node(
            id=node_id,
            kind=kind,
            parent=parent,
            status=NodeStatus.SUCCEEDED if kind == NodeKind.INITIAL else NodeStatus.PENDING,
            created_round=created_round,
            seq=int(suffix),
        )
        self._insert(node)
        if kind == NodeKind.INITIAL:
            self._root_id = node.id

    # -- lifecycle --------------------------------------------------------

    def node(self, node_id: NodeId) -> Node:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def _transition(self, node: Node, status: NodeStatus) -> None:
        if status not in _ALLOWED_TRANSITIONS[node.status]:
            raise TreeError(
                f"illegal status transition {node.status.value} -> {status.value} for {node.id}"
            )
        node.status = status

    def mark_running(self, node_id: NodeId) -> None:
        self._transition(self.node(node_id), NodeStatus.RUNNING)

    def complete(
        self,
        node_id: NodeId,
        status: NodeStatus,
        cost: CostRecord,
        raw_score: Optional[float] = None,
    ) -> None:
        """Move a running node to a terminal status and freeze its result."""
        if status not in (NodeStatus.SUCCEEDED, NodeStatus.FAILED):
            raise TreeError(f"complete() requires a terminal status, got {status.value}")
        node = self.node(node_id)
        self._transition(node, status)
        node.cost = cost
        node.raw_score = raw_score

    def attach_initial_result(self, raw_score: float, cost: CostRecord) -> None:
        """Record the baseline evaluation on the initial node, once."""
        root = self.node(self.root_id)
        if root.raw_score is not None:
            raise TreeError("initial node already has a score")
        root.raw_score = raw_score
        root.cost = cost

    # -- navigation -------------------------------------------------------

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: NodeId) -> bool:
        return node_id in self._nodes

    def nodes(self) -> Iterator[Node]:
        """All nodes in creation order."""
        return iter(self._nodes.values())

    def children(self, node_id: NodeId) -> list[NodeId]:
        if node_id not in self._nodes:
            raise UnknownNodeError(node_id)
        return list(self._children[node_id])

    def path_to_root(self, node_id: NodeId) -> list[NodeId]:
        """The node sequence (v, parent(v), ..., root)."""
        node = self.node(node_id)
        path = [node.id]
        seen = {node.id}
        while node.parent is not None:
            node = self.node(node.parent)
            if node.id in seen:
                raise TreeError(f"cycle detected through {node.id}")
            seen.add(node.id)
            path.append(node.id)
        return path

    def depth(self, node_id: NodeId) -> int:
        return len(self.path_to_root(node_id)) - 1

    def siblings(self, node_id: NodeId) -> set[NodeId]:
        """All other children of the node's parent; empty for the root."""
        node = self.node(node_id)
        if node.parent is None:
            return set()
        return {c for c in self._children[node.parent] if c != node_id}

    def subtree(self, node_id: NodeId) -> set[NodeId]:
        """All nodes in the subtree rooted at ``node_id`` (inclusive)."""
        if node_id not in self._nodes:
            raise UnknownNodeError(node_id)
        out: set[NodeId] = set()
        stack = [node_id]
        while stack:
            nid = stack.pop()
            out.add(nid)
            stack.extend(self._children[nid])
        return out

    def nearest_red_ancestor(self, node_id: NodeId) -> Optional[NodeId]:
        """Closest ancestor with kind red, the node itself excluded."""
        node = self.node(node_id)
        while node.parent is not None:
            node = self.node(node.parent)
            if node.kind == NodeKind.RED:
                return node.id
        return None

    def pending(self) -> list[NodeId]:
        """Pending nodes in creation order (the scheduling frontier)."""
        return [n.id for n in self._nodes.values() if n.status == NodeStatus.PENDING]

    def best_black_node(self, direction: Direction) -> Optional[NodeId]:
        """The succeeded black node with the extremal raw score.

        Ties go to the earliest created node. Returns None when no
        succeeded black node carries a score.
        """
        best: Optional[Node] = None
        for node in self._nodes.values():
            if node.kind != NodeKind.BLACK or node.status != NodeStatus.SUCCEEDED:
                continue
            if node.raw_score is None:
                continue
            if best is None or direction.better(node.raw_score, best.raw_score):
                best = node
        return best.id if best is not None else None

    def counts_by_kind(self) -> dict[NodeKind, int]:
        out = {k: 0 for k in NodeKind}
        for node in self._nodes.values():
            out[node.kind] += 1
        return out

    def counts_by_status(self) -> dict[NodeStatus, int]:
        out = {s: 0 for s in NodeStatus}
        for node in self._nodes.values():
            out[node.status] += 1
        return out


def create_tree(task: str, initial_state: dict, pool=None, token: Optional[str] = None) -> Tree:
    """Build a fresh tree whose root holds the baseline data state.

    When ``pool`` is given, every entry id referenced by the initial
    selection must already exist in it; a dangling reference is a
    configuration error, not something to silently drop. Passing a
    ``token`` pins the node id prefix, which reproducible runs need
    because ids seed the executors.
    """
    if pool is not None:
        for entry_id in initial_state.get("selection", []):
            if entry_id not in pool:
                raise TreeError(f"initial state references unknown pool entry {entry_id!r}")
    tree = Tree(token=token)
    tree.task = task
    tree.initial_state = dict(initial_state)
    tree.add_initial()
    return tree
