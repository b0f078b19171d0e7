"""Run metrics: overcome rate, normalized gain, branch bias, cost tables.

Everything here is read-only over a finished or in-progress run. The
formula-level functions raise on undefined inputs (no scored baseline,
a single branch, zero executed nodes); the report builder degrades to
None fields instead so a partial run still prints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .events import Event
from .tree import Direction, NodeId, NodeKind, NodeStatus, Tree


class MetricError(Exception):
    pass


def overcome_rate(tree: Tree, direction: Direction) -> float:
    """Share of scored exploitation nodes strictly beating the baseline.

    The denominator is succeeded black nodes that carry a score; failed
    nodes never count against the rate.
    """
    root = tree.node(tree.root_id)
    if root.raw_score is None:
        raise MetricError("initial node has no score; run the baseline evaluation first")
    scored = [
        n
        for n in tree.nodes()
        if n.kind == NodeKind.BLACK and n.status == NodeStatus.SUCCEEDED and n.raw_score is not None
    ]
    if not scored:
        return 0.0
    better = sum(1 for n in scored if direction.better(n.raw_score, root.raw_score))
    return 100.0 * better / len(scored)


def normalized_gain(
    initial: float, best: float, gold: float, median: float, direction: Direction
) -> float:
    """Best-node improvement relative to the gold-to-median score range."""
    span = abs(gold - median)
    if span == 0:
        raise MetricError("gold and median thresholds coincide; normalization undefined")
    if direction == Direction.HIGHER_BETTER:
        return 100.0 * (best - initial) / span
    return 100.0 * (initial - best) / span


def bias_from_counts(counts: Iterable[int]) -> float:
    """Concentration of node counts over root-level branches.

    0 when every branch holds the same share, 1 when a single branch
    holds everything. Computed in integer arithmetic so the boundary
    cases are exact, not approximately so.
    """
    ns = [int(c) for c in counts]
    k = len(ns)
    if k < 2:
        raise MetricError("branch bias needs at least 2 root-level branches")
    if any(c < 0 for c in ns):
        raise MetricError("branch counts must be nonnegative")
    total = sum(ns)
    if total == 0:
        raise MetricError("branch bias undefined with no assigned nodes")
    # (sum p_i^2 - 1/K) / (1 - 1/K) with p_i = n_i/total, cleared of
    # denominators: every term is an integer until the final division.
    numerator = k * sum(c * c for c in ns) - total * total
    denominator = total * total * (k - 1)
    return numerator / denominator


def branch_counts(tree: Tree, upto_seq: Optional[int] = None) -> dict[NodeId, int]:
    """Nodes per root-level branch; keys are the initial node's children.

    A node belongs to the branch containing its highest non-initial
    ancestor. ``upto_seq`` restricts to nodes created at or before that
    sequence number, giving the tree as it stood mid-run.
    """
    root = tree.root_id
    counts: dict[NodeId, int] = {}
    for child in tree.children(root):
        node = tree.node(child)
        if upto_seq is None or node.seq <= upto_seq:
            counts[child] = 0
    for node in tree.nodes():
        if node.id == root:
            continue
        if upto_seq is not None and node.seq > upto_seq:
            continue
        path = tree.path_to_root(node.id)
        branch = path[-2]  # the root-level ancestor just below the root
        counts[branch] = counts.get(branch, 0) + 1
    return counts


def branch_bias(tree: Tree, upto_seq: Optional[int] = None) -> float:
    counts = branch_counts(tree, upto_seq)
    return bias_from_counts(list(counts.values()))


def bias_series_from_events(events: Iterable[Event]) -> list[tuple[int, Optional[float]]]:
    """Branch bias after each node completion, replayed from the log.

    Entries are (completion step t, bias); bias is None while fewer
    than two root-level branches exist.
    """
    root: Optional[NodeId] = None
    branch_of: dict[NodeId, NodeId] = {}
    sizes: dict[NodeId, int] = {}
    series: list[tuple[int, Optional[float]]] = []
    t = 0
    for event in events:
        if event.kind == "node_added":
            node_id = event.data["node_id"]
            parent = event.data.get("parent")
            if event.data.get("kind") == NodeKind.INITIAL.value:
                root = node_id
            elif parent == root:
                branch_of[node_id] = node_id
                sizes[node_id] = sizes.get(node_id, 0) + 1
            elif parent in branch_of:
                branch = branch_of[parent]
                branch_of[node_id] = branch
                sizes[branch] += 1
        elif event.kind == "node_completed":
            t += 1
            if len(sizes) >= 2:
                series.append((t, bias_from_counts(list(sizes.values()))))
            else:
                series.append((t, None))
    return series


def node_ratio(n_red: int, n_black: int) -> float:
    if n_red <= 0 or n_black <= 0:
        raise MetricError("node ratio needs executed nodes of both kinds")
    return n_red / n_black


def tool_ratio(tool_avg_red: float, tool_avg_black: float) -> float:
    if tool_avg_black == 0:
        raise MetricError("tool ratio undefined with zero black tool calls")
    return tool_avg_red / tool_avg_black


def red_black_ratios(tree: Tree) -> tuple[float, float]:
    """Executed-node ratio and tool-intensity ratio between kinds."""
    reds = [n for n in tree.nodes() if n.kind == NodeKind.RED and n.cost is not None]
    blacks = [n for n in tree.nodes() if n.kind == NodeKind.BLACK and n.cost is not None]
    if not reds or not blacks:
        raise MetricError("ratios need executed nodes of both kinds")
    r_node = node_ratio(len(reds), len(blacks))
    avg_red = sum(n.cost.tool_calls for n in reds) / len(reds)
    avg_black = sum(n.cost.tool_calls for n in blacks) / len(blacks)
    return r_node, tool_ratio(avg_red, avg_black)


def cost_breakdown(tree: Tree) -> dict[str, dict]:
    """Per-kind execution cost table over red, black, and both together.

    The baseline evaluation is excluded: the table describes search
    spending, and the baseline is charged before the search starts.
    """
    rows: dict[str, dict] = {}
    groups = {
        "red": [n for n in tree.nodes() if n.kind == NodeKind.RED and n.cost is not None],
        "black": [n for n in tree.nodes() if n.kind == NodeKind.BLACK and n.cost is not None],
    }
    groups["all"] = groups["red"] + groups["black"]
    for name, nodes in groups.items():
        count = len(nodes)
        if count == 0:
            rows[name] = {
                "nodes": 0,
                "mean_input_tokens": 0.0,
                "mean_output_tokens": 0.0,
                "mean_tool_calls": 0.0,
                "mean_wall_seconds": 0.0,
            }
            continue
        rows[name] = {
            "nodes": count,
            "mean_input_tokens": sum(n.cost.input_tokens for n in nodes) / count,
            "mean_output_tokens": sum(n.cost.output_tokens for n in nodes) / count,
            "mean_tool_calls": sum(n.cost.tool_calls for n in nodes) / count,
            "mean_wall_seconds": sum(n.cost.wall_seconds for n in nodes) / count,
        }
    return rows


@dataclass
class RunReport:
    overcome_rate: Optional[float]
    normalized_gain: Optional[float]
    bias_series: list = field(default_factory=list)
    r_node: Optional[float] = None
    r_tool: Optional[float] = None
    cost_table: dict = field(default_factory=dict)
    best_score: Optional[float] = None
    initial_score: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "overcome_rate": self.overcome_rate,
            "normalized_gain": self.normalized_gain,
            "bias_series": [[t, b] for t, b in self.bias_series],
            "r_node": self.r_node,
            "r_tool": self.r_tool,
            "cost_table": self.cost_table,
            "best_score": self.best_score,
            "initial_score": self.initial_score,
        }


def build_report(
    tree: Tree,
    direction: Direction,
    events: Optional[Iterable[Event]] = None,
    gold: Optional[float] = None,
    median: Optional[float] = None,
) -> RunReport:
    """Assemble every metric that the run's state supports."""
    root = tree.node(tree.root_id)
    initial_score = root.raw_score
    best_id = tree.best_black_node(direction)
    best_score = tree.node(best_id).raw_score if best_id is not None else None

    rate = None
    if initial_score is not None:
        rate = overcome_rate(tree, direction)
    gain = None
    if None not in (initial_score, best_score, gold, median) and gold != median:
        gain = normalized_gain(initial_score, best_score, gold, median, direction)
    try:
        r_node, r_tool = red_black_ratios(tree)
    except MetricError:
        r_node = r_tool = None
    series = bias_series_from_events(events) if events is not None else []
    return RunReport(
        overcome_rate=rate,
        normalized_gain=gain,
        bias_series=series,
        r_node=r_node,
        r_tool=r_tool,
        cost_table=cost_breakdown(tree),
        best_score=best_score,
        initial_score=initial_score,
    )