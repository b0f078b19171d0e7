"""Global memory records, context assembly, and the JSONL store."""

import pytest

from datatree.memory import (
    DataStateDescriptor,
    GlobalMemory,
    MemoryRecord,
    MemoryStoreError,
)
from datatree.pool import DataPool, PoolEntry
from datatree.tree import CostRecord, NodeKind, NodeStatus, create_tree


def make_tree():
    return create_tree("demo", {"selection": []}, token="t0")


def finish(tree, node_id, status=NodeStatus.SUCCEEDED, score=None):
    tree.mark_running(node_id)
    tree.complete(node_id, status, CostRecord(), raw_score=score)


def red_record(node, ids=("p0",)):
    return MemoryRecord(node=node, kind="red", delta_pool_ids=tuple(ids))


def black_record(node, score=0.5, entries=("p0",)):
    state = DataStateDescriptor(state_id=f"state-{node}", selected_entries=tuple(entries))
    return MemoryRecord(node=node, kind="black", data_state=state, score=score)


def test_record_kind_constraints():
    with pytest.raises(ValueError):
        MemoryRecord(node="v", kind="green")
    with pytest.raises(ValueError):
        MemoryRecord(node="v", kind="red", score=0.5)
    with pytest.raises(ValueError):
        MemoryRecord(node="v", kind="red", data_state=DataStateDescriptor(state_id="s"))
    with pytest.raises(ValueError):
        MemoryRecord(node="v", kind="black", delta_pool_ids=("p0",))


def test_write_once_per_node():
    memory = GlobalMemory()
    memory.write_record(red_record("t0.n1"))
    with pytest.raises(MemoryStoreError):
        memory.write_record(red_record("t0.n1"))
    assert len(memory) == 1
    assert "t0.n1" in memory
    assert memory.get("t0.n1").kind == "red"
    assert memory.get("t0.n9") is None


def test_default_context_parent_then_siblings():
    tree = make_tree()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    b1 = tree.add_node(NodeKind.BLACK, red)
    b2 = tree.add_node(NodeKind.BLACK, red)
    b3 = tree.add_node(NodeKind.BLACK, red)
    memory = GlobalMemory()
    memory.write_record(red_record(red))
    finish(tree, b2, score=0.4)
    memory.write_record(black_record(b2, 0.4))
    finish(tree, b1, score=0.6)
    memory.write_record(black_record(b1, 0.6))
    context = memory.default_context(tree, b3)
    # parent first, then completed siblings in creation order
    assert [r.node for r in context] == [red, b1, b2]
    # the node's own record never shows up
    assert b3 not in [r.node for r in context]


def test_default_context_skips_unexecuted():
    tree = make_tree()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    b1 = tree.add_node(NodeKind.BLACK, red)
    memory = GlobalMemory()
    assert memory.default_context(tree, b1) == []


def test_query_records_filters():
    tree = make_tree()
    red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, red)
    b1 = tree.add_node(NodeKind.BLACK, red)
    finish(tree, b1, score=0.8)
    other_red = tree.add_node(NodeKind.RED, tree.root_id)
    finish(tree, other_red)
    memory = GlobalMemory()
    memory.write_record(black_record(b1, 0.8))
    memory.write_record(red_record(red))
    memory.write_record(red_record(other_red, ids=("p1",)))
    assert [r.node for r in memory.query_records(kind="red")] == [red, other_red]
    assert [r.node for r in memory.query_records(min_score=0.5)] == [b1]
    assert [r.node for r in memory.query_records(min_score=0.9)] == []
    subtree = memory.query_records(branch_root=red, tree=tree)
    assert [r.node for r in subtree] == [red, b1]
    with pytest.raises(ValueError):
        memory.query_records(branch_root=red)


def test_findings_append_in_order():
    memory = GlobalMemory()
    memory.write_record(black_record("t0.n2"))
    memory.append_finding("t0.n2", "first")
    memory.append_finding("t0.n2", "second")
    assert memory.get("t0.n2").findings == ["first", "second"]
    with pytest.raises(MemoryStoreError):
        memory.append_finding("t0.n9", "orphan")


def test_store_round_trip(tmp_path):
    path = tmp_path / "memory.jsonl"
    memory = GlobalMemory()
    records = [
        red_record("t0.n1", ids=("p0", "p1")),
        black_record("t0.n2", 0.7, entries=("p0",)),
        MemoryRecord(node="t0.n3", kind="black", data_state=None,
                     diagnostics={"move": "keep"}, findings=["note"]),
    ]
    for record in records:
        memory.write_record(record)
        memory.append_to(str(path), record)
    loaded = GlobalMemory.read_store(str(path))
    assert [r.to_dict() for r in loaded.records()] == [r.to_dict() for r in memory.records()]


def test_descriptor_validate_against_pool():
    pool = DataPool()
    pool.append_restored(PoolEntry(id="p0", source_pointer="hub://a"))
    good = DataStateDescriptor(state_id="s", selected_entries=("p0",))
    good.validate(pool)
    bad = DataStateDescriptor(state_id="s", selected_entries=("p7",))
    with pytest.raises(ValueError):
        bad.validate(pool)
    unnamed = DataStateDescriptor(state_id="s", recipe=({"params": {}},))
    with pytest.raises(ValueError):
        unnamed.validate()
