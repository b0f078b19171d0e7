"""Branch scheduling: rewards, backpropagation, UCB selection, growth.

Every node carries a visit count N and cumulative reward R, updated
along the whole root path when a node completes. Selection ranks the
pending frontier by mean reward plus an exploration bonus whose
coefficient decays over rounds, so early rounds spread across branches
and late rounds concentrate on what already pays off. Growth decides
whether a finished exploitation step earns more tries under its data
source or a fresh discovery step instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .tree import NodeId, NodeKind, NodeStatus, Tree

DECAY_KINDS = ("piecewise", "linear", "exponential")


@dataclass
class ScheduleConfig:
    c0: float = 1.414
    c_min: float = 0.5
    alpha: float = 0.01
    p1: float = 0.3
    p2: float = 0.7
    epsilon: float = 0.01
    T: int = 40
    gamma: float = 0.99
    decay_kind: str = "piecewise"
    num_red: int = 1
    num_black: int = 5
    max_black_per_red: int = 5
    parallelism: int = 1
    seed: int = 0
    controller: str = "default"

    def validate(self) -> None:
        if self.decay_kind not in DECAY_KINDS:
            raise ValueError(f"unknown decay kind {self.decay_kind!r}, expected one of {DECAY_KINDS}")
        if not 0.0 < self.c_min <= self.c0:
            raise ValueError("exploration constants require 0 < c_min <= c0")
        if not 0.0 <= self.p1 <= self.p2 <= 1.0:
            raise ValueError("decay breakpoints require 0 <= p1 <= p2 <= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie strictly between 0 and 1")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.T < 1:
            raise ValueError("round budget T must be positive")
        if min(self.num_red, self.num_black, self.max_black_per_red, self.parallelism) < 1:
            raise ValueError("num_red, num_black, max_black_per_red, parallelism must be positive")
        if self.num_black > self.max_black_per_red:
            raise ValueError("num_black must not exceed max_black_per_red")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown growth controller {self.controller!r}")


def exploration_coefficient(t: int, cfg: ScheduleConfig) -> float:
    """Exploration coefficient c_t at completion count ``t``.

    piecewise   holds c0 until round floor(p1*T), decays linearly at
                rate alpha until floor(p2*T), then floors at c_min
    linear      decays from round 0, floored at c_min
    exponential multiplies by gamma each round, floored at c_min
    """
    if cfg.decay_kind == "piecewise":
        t1 = math.floor(cfg.p1 * cfg.T)
        t2 = math.floor(cfg.p2 * cfg.T)
        if t < t1:
            return cfg.c0
        if t <= t2:
            return max(cfg.c0 - cfg.alpha * (t - t1), cfg.c_min)
        return cfg.c_min
    if cfg.decay_kind == "linear":
        return max(cfg.c0 - cfg.alpha * t, cfg.c_min)
    if cfg.decay_kind == "exponential":
        return max(cfg.c0 * cfg.gamma**t, cfg.c_min)
    raise ValueError(f"unknown decay kind {cfg.decay_kind!r}")


def ucb_score(total_reward: float, visits: int, parent_visits: int, c: float) -> float:
    """Upper confidence bound for one branch.

    An unvisited branch scores +inf so it runs before any visited one.
    A visited branch whose parent shows zero visits means reward
    updates skipped an ancestor, which is a bug worth failing loudly.
    """
    if visits == 0:
        return math.inf
    if parent_visits == 0:
        raise ValueError("visited node with unvisited parent: backpropagation missed the path")
    return total_reward / visits + c * math.sqrt(math.log(parent_visits) / visits)


class BranchStats:
    """Visit counts and cumulative rewards, keyed by node id.

    Kept apart from the tree so replay and what-if scoring can rebuild
    them without touching node records.
    """

    def __init__(self) -> None:
        self._visits: dict[NodeId, int] = {}
        self._rewards: dict[NodeId, float] = {}

    def visits(self, node_id: NodeId) -> int:
        return self._visits.get(node_id, 0)

    def reward(self, node_id: NodeId) -> float:
        return self._rewards.get(node_id, 0.0)

    def record(self, node_id: NodeId, reward: float) -> None:
        self._visits[node_id] = self._visits.get(node_id, 0) + 1
        self._rewards[node_id] = self._rewards.get(node_id, 0.0) + reward

    def to_dict(self) -> dict:
        return {
            v: {"n": self._visits[v], "r": self._rewards[v]}
            for v in sorted(self._visits)
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BranchStats":
        stats = cls()
        for node_id, entry in d.items():
            stats._visits[node_id] = int(entry["n"])
            stats._rewards[node_id] = float(entry["r"])
        return stats


@dataclass(frozen=True)
class NodeOutcome:
    """Terminal result of one node execution, as the scheduler sees it."""

    node: NodeId
    result: str  # "red_success" | "black_scored" | "failed"
    delta_pool_ids: tuple[str, ...] = ()
    normalized_reward: Optional[float] = None
    raw_score: Optional[float] = None
    state: Optional[dict] = None
    diagnostics: dict = field(default_factory=dict)


def reward(outcome: NodeOutcome, cfg: ScheduleConfig) -> float:
    """Reward credited for a completed node.

    A successful discovery earns the small fixed bonus epsilon, a
    scored exploitation earns its normalized score, and any failure
    earns nothing.
    """
    if outcome.result == "red_success":
        return cfg.epsilon
    if outcome.result == "black_scored":
        if outcome.normalized_reward is None:
            raise ValueError("black_scored outcome requires a normalized reward")
        if not 0.0 <= outcome.normalized_reward <= 1.0:
            raise ValueError("normalized reward must lie in [0, 1]")
        return outcome.normalized_reward
    if outcome.result == "failed":
        return 0.0
    raise ValueError(f"unknown outcome result {outcome.result!r}")


def normalize_score(raw: float, lower: float, upper: float, higher_better: bool) -> float:
    """Clamped affine map from a raw task metric into [0, 1] reward space."""
    if upper <= lower:
        raise ValueError("score bounds require lower < upper")
    if higher_better:
        frac = (raw - lower) / (upper - lower)
    else:
        frac = (upper - raw) / (upper - lower)
    return min(1.0, max(0.0, frac))


def backpropagate(tree: Tree, stats: BranchStats, node_id: NodeId, r: float) -> list[NodeId]:
    """Add one visit and reward ``r`` to every node from ``node_id`` to the root.

    Rewards outside [0, 1] are rejected; they mean a raw score slipped
    through without normalization. Returns the updated path, leaf first.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"reward {r} outside [0, 1]; normalize raw scores before backpropagation")
    path = tree.path_to_root(node_id)
    for ancestor in path:
        stats.record(ancestor, r)
    return path


def select_next(
    tree: Tree,
    stats: BranchStats,
    t: int,
    cfg: ScheduleConfig,
    frontier: Optional[list[NodeId]] = None,
) -> Optional[NodeId]:
    """Pick the pending node with the highest confidence bound.

    Unvisited nodes score infinity, so one of them always runs while
    any exist; the tie among them is broken by descending from the root
    through the child with the best confidence bound whose subtree
    still holds unvisited work, and returning the first unvisited
    pending child met on the way. Siblings of a strong node therefore
    all run before the search moves past them, and a decayed
    coefficient narrows the descent onto the branches that pay. Visited
    pending nodes, if any remain, compete by plain confidence bound.
    Every comparison breaks remaining ties by creation order, so equal
    scores never make a run nondeterministic.
    """
    if frontier is None:
        frontier = tree.pending()
    if not frontier:
        return None
    eligible = set(frontier)
    c = exploration_coefficient(t, cfg)

    def pending_unvisited(node_id: NodeId) -> bool:
        return (
            node_id in eligible
            and tree.node(node_id).status == NodeStatus.PENDING
            and stats.visits(node_id) == 0
        )

    # Mark which subtrees still hold unvisited pending nodes. Nodes are
    # stored in creation order, so one reverse sweep is bottom-up.
    has_unvisited: dict[NodeId, bool] = {}
    for node in reversed(list(tree.nodes())):
        flag = pending_unvisited(node.id)
        for child in tree.children(node.id):
            flag = flag or has_unvisited[child]
        has_unvisited[node.id] = flag

    if not has_unvisited.get(tree.root_id, False):
        # Only visited pending nodes remain; rank them directly.
        best_id: Optional[NodeId] = None
        best_key: Optional[tuple] = None
        for node_id in frontier:
            node = tree.node(node_id)
            if node.status != NodeStatus.PENDING:
                continue
            parent_visits = stats.visits(node.parent) if node.parent is not None else 0
            score = ucb_score(stats.reward(node_id), stats.visits(node_id), parent_visits, c)
            key = (-score, node.created_round, node.seq)
            if best_key is None or key < best_key:
                best_key = key
                best_id = node_id
        return best_id

    v = tree.root_id
    while True:
        children = tree.children(v)
        direct = [k for k in children if pending_unvisited(k)]
        if direct:
            return min(direct, key=lambda k: (tree.node(k).created_round, tree.node(k).seq))
        best_child: Optional[NodeId] = None
        best_key = None
        for k in children:
            if not has_unvisited[k]:
                continue
            score = ucb_score(stats.reward(k), stats.visits(k), stats.visits(v), c)
            key = (-score, tree.node(k).created_round, tree.node(k).seq)
            if best_key is None or key < best_key:
                best_key = key
                best_child = k
        v = best_child


# -- growth policy --------------------------------------------------------


class GrowthDecision(str, Enum):
    DEEPEN = "deepen"
    BROADEN = "broaden"
    # Opens a new top-level branch instead of extending the current one.
    # Never chosen by the default controller; see root_broaden_controller.
    BROADEN_ROOT = "broaden_root"


@dataclass(frozen=True)
class BranchSummary:
    """What the growth controller may look at after a black completion."""

    last_reward: Optional[float]  # normalized; None when the node failed
    best_before: Optional[float]  # best normalized reward on the branch before it
    quota_used: int
    quota_cap: int


def default_controller(summary: BranchSummary, cfg: ScheduleConfig) -> GrowthDecision:
    """Deepen only when the branch is still paying off and has quota left."""
    if summary.quota_used >= summary.quota_cap:
        return GrowthDecision.BROADEN
    if summary.last_reward is None:
        return GrowthDecision.BROADEN
    if summary.best_before is not None and summary.last_reward <= summary.best_before:
        return GrowthDecision.BROADEN
    return GrowthDecision.DEEPEN


def root_broaden_controller(summary: BranchSummary, cfg: ScheduleConfig) -> GrowthDecision:
    """Variant that sends broadening to the root, opening new branches."""
    decision = default_controller(summary, cfg)
    if decision == GrowthDecision.BROADEN:
        return GrowthDecision.BROADEN_ROOT
    return decision


GrowthControllerFn = Callable[[BranchSummary, ScheduleConfig], GrowthDecision]

CONTROLLERS: dict[str, GrowthControllerFn] = {
    "default": default_controller,
    "root_broaden": root_broaden_controller,
}


def controller_decide(summary: BranchSummary, cfg: ScheduleConfig) -> GrowthDecision:
    return CONTROLLERS[cfg.controller](summary, cfg)


@dataclass
class GrowthResult:
    added: list[NodeId]
    decision_applied: Optional[GrowthDecision]
    note: str = ""


def _black_children(tree: Tree, node_id: NodeId) -> int:
    return sum(1 for c in tree.children(node_id) if tree.node(c).kind == NodeKind.BLACK)


def grow(
    tree: Tree,
    completed: NodeId,
    decision: Optional[GrowthDecision],
    cfg: ScheduleConfig,
    t: int = 0,
) -> GrowthResult:
    """Expand the tree after ``completed`` reached a terminal status.

    A finished discovery node gets ``num_black`` exploitation children
    regardless of ``decision``. A finished exploitation node either
    deepens (more black siblings under its discovery ancestor, capped
    at ``max_black_per_red`` total, failures included) or broadens by
    attaching ``num_red`` fresh discovery nodes to itself. Deepening
    with no quota left falls back to broadening, noted in the result.
    """
    node = tree.node(completed)
    if not node.completed:
        raise ValueError(f"cannot grow at {completed}: node is not in a terminal status")
    if node.kind == NodeKind.INITIAL:
        added = [tree.add_node(NodeKind.RED, completed, created_round=t) for _ in range(cfg.num_red)]
        return GrowthResult(added, None, note="bootstrap")
    if node.kind == NodeKind.RED:
        added = [tree.add_node(NodeKind.BLACK, completed, created_round=t) for _ in range(cfg.num_black)]
        return GrowthResult(added, None)

    if decision is None:
        raise ValueError("growing at a black node requires a growth decision")
    note = ""
    if decision == GrowthDecision.DEEPEN:
        red_anc = tree.nearest_red_ancestor(completed)
        room = 0
        if red_anc is not None:
            room = cfg.max_black_per_red - _black_children(tree, red_anc)
        if room > 0:
            count = min(cfg.num_black, room)
            added = [tree.add_node(NodeKind.BLACK, red_anc, created_round=t) for _ in range(count)]
            return GrowthResult(added, GrowthDecision.DEEPEN)
        decision = GrowthDecision.BROADEN
        note = f"deepen quota exhausted under {red_anc}; broadened instead"
    if decision == GrowthDecision.BROADEN_ROOT:
        anchor = tree.root_id
    else:
        anchor = completed
    added = [tree.add_node(NodeKind.RED, anchor, created_round=t) for _ in range(cfg.num_red)]
    return GrowthResult(added, decision, note)