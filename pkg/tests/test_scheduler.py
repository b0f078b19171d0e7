"""Scheduling policy: decay, confidence bounds, backprop, growth."""

import math
import random

import pytest

from datatree.scheduler import (
    BranchStats,
    BranchSummary,
    GrowthDecision,
    NodeOutcome,
    ScheduleConfig,
    backpropagate,
    controller_decide,
    default_controller,
    exploration_coefficient,
    grow,
    normalize_score,
    reward,
    root_broaden_controller,
    select_next,
    ucb_score,
)
from datatree.tree import CostRecord, NodeKind, NodeStatus, create_tree


def make_tree(token="t0"):
    return create_tree("demo", {"selection": []}, token=token)


def finish(tree, node_id, status=NodeStatus.SUCCEEDED, score=None):
    tree.mark_running(node_id)
    tree.complete(node_id, status, CostRecord(), raw_score=score)


# -- config ----------------------------------------------------------------


def test_schedule_validate_rejects_bad_values():
    bad = [
        dict(decay_kind="sqrt"),
        dict(c_min=0.0),
        dict(c_min=2.0),  # above c0
        dict(p1=0.8, p2=0.2),
        dict(gamma=1.0),
        dict(gamma=0.0),
        dict(epsilon=0.0),
        dict(T=0),
        dict(num_red=0),
        dict(num_black=0),
        dict(parallelism=0),
        dict(num_black=6, max_black_per_red=5),
        dict(controller="nope"),
    ]
    for kw in bad:
        with pytest.raises(ValueError):
            ScheduleConfig(**kw).validate()
    ScheduleConfig().validate()


# -- decay -----------------------------------------------------------------


def test_piecewise_decay_segments():
    cfg = ScheduleConfig()  # T=40 so breakpoints sit at 12 and 28
    for t in range(12):
        assert exploration_coefficient(t, cfg) == cfg.c0
    assert abs(exploration_coefficient(12, cfg) - cfg.c0) < 1e-12
    assert abs(exploration_coefficient(20, cfg) - (cfg.c0 - 0.01 * 8)) < 1e-12
    assert abs(exploration_coefficient(28, cfg) - (cfg.c0 - 0.01 * 16)) < 1e-12
    for t in range(29, 60):
        assert exploration_coefficient(t, cfg) == cfg.c_min


def test_piecewise_floors_at_c_min():
    cfg = ScheduleConfig(alpha=1.0)
    assert exploration_coefficient(20, cfg) == cfg.c_min


def test_linear_decay():
    cfg = ScheduleConfig(decay_kind="linear", alpha=0.1)
    assert abs(exploration_coefficient(3, cfg) - (cfg.c0 - 0.3)) < 1e-12
    assert exploration_coefficient(1000, cfg) == cfg.c_min


def test_exponential_decay():
    cfg = ScheduleConfig(decay_kind="exponential", gamma=0.5)
    assert exploration_coefficient(0, cfg) == cfg.c0
    assert abs(exploration_coefficient(1, cfg) - cfg.c0 * 0.5) < 1e-12
    assert exploration_coefficient(50, cfg) == cfg.c_min


def test_decay_is_monotone_nonincreasing():
    rng = random.Random(99)
    for kind in ("piecewise", "linear", "exponential"):
        cfg = ScheduleConfig(
            decay_kind=kind,
            alpha=rng.uniform(0.001, 0.2),
            gamma=rng.uniform(0.5, 0.99),
        )
        values = [exploration_coefficient(t, cfg) for t in range(80)]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))
        assert values[-1] >= cfg.c_min


# -- ucb -------------------------------------------------------------------


def test_ucb_unvisited_is_infinite():
    assert ucb_score(0.0, 0, 5, 1.0) == math.inf
    assert ucb_score(0.0, 0, 0, 1.0) == math.inf


def test_ucb_visited_with_zero_parent_visits_raises():
    with pytest.raises(ValueError):
        ucb_score(0.5, 1, 0, 1.0)


def test_ucb_known_value():
    got = ucb_score(0.5, 1, 2, 1.414)
    want = 0.5 + 1.414 * math.sqrt(math.log(2))
    assert abs(got - want) < 1e-12


def test_ucb_exploitation_and_exploration_terms():
    # more visits shrink the bonus; higher mean raises the score
    low = ucb_score(1.0, 4, 100, 1.0)
    high = ucb_score(1.0, 2, 100, 1.0)
    assert high > low
    assert ucb_score(3.0, 4, 100, 1.0) > ucb_score(1.0, 4, 100, 1.0)


# -- rewards and backprop --------------------------------------------------


def test_reward_mapping():
    cfg = ScheduleConfig()
    assert reward(NodeOutcome("v", "red_success"), cfg) == cfg.epsilon
    assert reward(NodeOutcome("v", "black_scored", normalized_reward=0.7), cfg) == 0.7
    assert reward(NodeOutcome("v", "failed"), cfg) == 0.0
    with pytest.raises(ValueError):
        reward(NodeOutcome("v", "black_scored"), cfg)
    with pytest.raises(ValueError):
        reward(NodeOutcome("v", "black_scored", normalized_reward=1.2), cfg)
    with pytest.raises(ValueError):
        reward(NodeOutcome("v", "something_else"), cfg)


def test_normalize_score_clamps_both_directions():
    assert normalize_score(0.25, 0.0, 1.0, True) == 0.25
    assert normalize_score(0.25, 0.0, 1.0, False) == 0.75
    assert normalize_score(5.0, 0.0, 1.0, True) == 1.0
    assert normalize_score(-5.0, 0.0, 1.0, True) == 0.0
    with pytest.raises(ValueError):
        normalize_score(0.5, 1.0, 1.0, True)


def test_backpropagate_updates_whole_path():
    tree = make_tree()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    black = tree.add_node(NodeKind.BLACK, red)
    stats = BranchStats()
    path = backpropagate(tree, stats, black, 0.5)
    assert path == [black, red, tree.root_id]
    for nid in path:
        assert stats.visits(nid) == 1
        assert stats.reward(nid) == 0.5
    backpropagate(tree, stats, red, 0.25)
    assert stats.visits(black) == 1
    assert stats.visits(red) == 2
    assert stats.visits(tree.root_id) == 2
    assert stats.reward(tree.root_id) == 0.75


def test_backpropagate_rejects_unnormalized():
    tree = make_tree()
    stats = BranchStats()
    for bad in (-0.1, 1.1, 7.0):
        with pytest.raises(ValueError):
            backpropagate(tree, stats, tree.root_id, bad)


def test_branch_stats_round_trip():
    stats = BranchStats()
    stats.record("a", 0.5)
    stats.record("a", 0.25)
    stats.record("b", 1.0)
    rebuilt = BranchStats.from_dict(stats.to_dict())
    assert rebuilt.visits("a") == 2
    assert rebuilt.reward("a") == 0.75
    assert rebuilt.visits("b") == 1


# -- selection -------------------------------------------------------------


def test_select_empty_frontier():
    tree = make_tree()
    assert select_next(tree, BranchStats(), 0, ScheduleConfig()) is None


def test_select_prefers_unvisited_over_visited():
    tree = make_tree()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    visited = tree.add_node(NodeKind.BLACK, red)
    fresh = tree.add_node(NodeKind.BLACK, red)
    stats = BranchStats()
    backpropagate(tree, stats, red, 0.01)
    # the pending node already carries stats, it must still lose to fresh
    stats.record(visited, 1.0)
    picked = select_next(tree, stats, 0, ScheduleConfig())
    assert picked == fresh


def test_select_visited_only_falls_back_to_ucb_order():
    tree = make_tree()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    a = tree.add_node(NodeKind.BLACK, red)
    b = tree.add_node(NodeKind.BLACK, red)
    stats = BranchStats()
    backpropagate(tree, stats, red, 0.01)
    stats.record(a, 0.1)
    stats.record(b, 0.9)
    cfg = ScheduleConfig(c_min=0.01, decay_kind="exponential", gamma=0.5)
    picked = select_next(tree, stats, 50, cfg)  # c decayed to c_min
    assert picked == b


def test_select_descends_toward_rewarding_subtree():
    """With exploration off, the pick comes from the better branch."""
    tree = make_tree()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    good = tree.add_node(NodeKind.BLACK, red)
    bad = tree.add_node(NodeKind.BLACK, red)
    stats = BranchStats()
    backpropagate(tree, stats, red, 0.01)
    finish(tree, good, score=0.9)
    backpropagate(tree, stats, good, 0.9)
    finish(tree, bad, score=0.1)
    backpropagate(tree, stats, bad, 0.1)
    under_good = tree.add_node(NodeKind.RED, good)
    under_bad = tree.add_node(NodeKind.RED, bad)
    cfg = ScheduleConfig(c_min=0.001, decay_kind="exponential", gamma=0.5)
    assert select_next(tree, stats, 60, cfg) == under_good
    assert under_bad in tree.pending()


def test_select_returns_pending_child_on_descent_path():
    tree = make_tree()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    stats = BranchStats()
    backpropagate(tree, stats, red, 0.01)
    blacks = [tree.add_node(NodeKind.BLACK, red) for _ in range(3)]
    assert select_next(tree, stats, 0, ScheduleConfig()) == blacks[0]


def test_select_never_picks_visited_while_unvisited_exists():
    rng = random.Random(4242)
    cfg = ScheduleConfig()
    for trial in range(40):
        tree = make_tree(token=f"t{trial}")
        stats = BranchStats()
        ids = [tree.root_id]
        for _ in range(rng.randrange(4, 30)):
            parent = rng.choice(ids)
            kind = NodeKind.RED if rng.random() < 0.4 else NodeKind.BLACK
            ids.append(tree.add_node(kind, parent))
        # randomly complete some nodes and backprop rewards
        for nid in ids[1:]:
            if rng.random() < 0.5:
                finish(tree, nid)
                backpropagate(tree, stats, nid, round(rng.random(), 3))
        # give a few still-pending nodes visit counts on purpose
        for nid in tree.pending():
            if rng.random() < 0.3:
                stats.record(nid, round(rng.random(), 3))
        frontier = tree.pending()
        if not frontier:
            continue
        picked = select_next(tree, stats, rng.randrange(30), cfg)
        assert picked in frontier
        unvisited = [v for v in frontier if stats.visits(v) == 0]
        if unvisited:
            assert stats.visits(picked) == 0


# -- growth ----------------------------------------------------------------


def test_grow_bootstrap_from_initial():
    tree = make_tree()
    cfg = ScheduleConfig(num_red=2, num_black=3, max_black_per_red=4)
    result = grow(tree, tree.root_id, None, cfg)
    assert result.note == "bootstrap"
    assert len(result.added) == 2
    assert all(tree.node(v).kind == NodeKind.RED for v in result.added)


def test_grow_red_gets_black_children():
    tree = make_tree()
    cfg = ScheduleConfig()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    result = grow(tree, red, None, cfg, t=3)
    assert len(result.added) == cfg.num_black
    for v in result.added:
        node = tree.node(v)
        assert node.kind == NodeKind.BLACK
        assert node.parent == red
        assert node.created_round == 3


def test_grow_requires_terminal_node():
    tree = make_tree()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    with pytest.raises(ValueError):
        grow(tree, red, None, ScheduleConfig())


def test_grow_black_requires_decision():
    tree = make_tree()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    black = tree.add_node(NodeKind.BLACK, red)
    finish(tree, black, score=0.5)
    with pytest.raises(ValueError):
        grow(tree, black, None, ScheduleConfig())


def test_grow_deepen_adds_black_siblings_up_to_quota():
    tree = make_tree()
    cfg = ScheduleConfig(num_black=2, max_black_per_red=5)
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    b1 = tree.add_node(NodeKind.BLACK, red)
    b2 = tree.add_node(NodeKind.BLACK, red)
    finish(tree, b1, score=0.5)
    result = grow(tree, b1, GrowthDecision.DEEPEN, cfg, t=2)
    assert result.decision_applied == GrowthDecision.DEEPEN
    assert len(result.added) == 2
    assert all(tree.node(v).parent == red for v in result.added)
    finish(tree, b2, score=0.6)
    # 4 blacks under the red now; only one deepen slot remains
    result = grow(tree, b2, GrowthDecision.DEEPEN, cfg)
    assert len(result.added) == 1


def test_grow_deepen_quota_exhausted_falls_back_to_broaden():
    tree = make_tree()
    cfg = ScheduleConfig(num_black=2, max_black_per_red=2)
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    b1 = tree.add_node(NodeKind.BLACK, red)
    b2 = tree.add_node(NodeKind.BLACK, red)
    finish(tree, b1, status=NodeStatus.FAILED)  # failures fill the quota too
    finish(tree, b2, score=0.4)
    result = grow(tree, b2, GrowthDecision.DEEPEN, cfg, t=4)
    assert result.decision_applied == GrowthDecision.BROADEN
    assert "quota exhausted" in result.note
    assert len(result.added) == cfg.num_red
    added = result.added[0]
    assert tree.node(added).kind == NodeKind.RED
    assert tree.node(added).parent == b2


def test_grow_broaden_root_anchors_at_root():
    tree = make_tree()
    cfg = ScheduleConfig()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    black = tree.add_node(NodeKind.BLACK, red)
    finish(tree, black, score=0.4)
    result = grow(tree, black, GrowthDecision.BROADEN_ROOT, cfg)
    assert result.decision_applied == GrowthDecision.BROADEN_ROOT
    assert tree.node(result.added[0]).parent == tree.root_id


# -- controllers -----------------------------------------------------------


def test_default_controller_decisions():
    cfg = ScheduleConfig()
    deepen = BranchSummary(last_reward=0.6, best_before=0.4, quota_used=2, quota_cap=5)
    assert default_controller(deepen, cfg) == GrowthDecision.DEEPEN
    no_gain = BranchSummary(last_reward=0.4, best_before=0.4, quota_used=2, quota_cap=5)
    assert default_controller(no_gain, cfg) == GrowthDecision.BROADEN
    failed = BranchSummary(last_reward=None, best_before=0.4, quota_used=2, quota_cap=5)
    assert default_controller(failed, cfg) == GrowthDecision.BROADEN
    full = BranchSummary(last_reward=0.9, best_before=0.1, quota_used=5, quota_cap=5)
    assert default_controller(full, cfg) == GrowthDecision.BROADEN
    first = BranchSummary(last_reward=0.5, best_before=None, quota_used=1, quota_cap=5)
    assert default_controller(first, cfg) == GrowthDecision.DEEPEN


def test_root_broaden_controller_redirects_broaden():
    cfg = ScheduleConfig(controller="root_broaden")
    no_gain = BranchSummary(last_reward=0.4, best_before=0.4, quota_used=2, quota_cap=5)
    assert root_broaden_controller(no_gain, cfg) == GrowthDecision.BROADEN_ROOT
    assert controller_decide(no_gain, cfg) == GrowthDecision.BROADEN_ROOT
    deepen = BranchSummary(last_reward=0.6, best_before=0.4, quota_used=2, quota_cap=5)
    assert controller_decide(deepen, cfg) == GrowthDecision.DEEPEN


def test_default_config_never_deepens():
    # num_black == max_black_per_red means the first batch fills the quota
    cfg = ScheduleConfig()
    tree = make_tree()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    blacks = grow(tree, red, None, cfg).added
    finish(tree, blacks[0], score=0.9)
    result = grow(tree, blacks[0], GrowthDecision.DEEPEN, cfg)
    assert result.decision_applied == GrowthDecision.BROADEN
