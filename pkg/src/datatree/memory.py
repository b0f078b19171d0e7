"""Global memory of per-node outcomes shared across the tree.

Every completed node leaves exactly one record: discovery nodes note
which pool entries they added, exploitation nodes note the data state
they built and how it scored (score absent on failure). A node about to
run sees its parent's record and its completed siblings' records, never
its own, so experience travels down chains and across batches without a
node's result leaking into its own prompt. Executors may also write
findings back onto their record after the fact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .tree import NodeId, Tree


class MemoryStoreError(Exception):
    pass


@dataclass(frozen=True)
class DataStateDescriptor:
    """The executable data configuration an exploitation step produced."""

    state_id: str
    selected_entries: tuple[str, ...] = ()
    recipe: tuple[dict, ...] = ()  # ordered steps, each {"name": ..., "params": {...}}
    loader_artifact: str = ""

    def validate(self, pool=None) -> None:
        for step in self.recipe:
            if not step.get("name"):
                raise ValueError("recipe steps require non-empty names")
        if pool is not None:
            for entry_id in self.selected_entries:
                if entry_id not in pool:
                    raise ValueError(f"data state references unknown pool entry {entry_id!r}")

    def to_dict(self) -> dict:
        return {
            "state_id": self.state_id,
            "selected_entries": list(self.selected_entries),
            "recipe": [dict(step) for step in self.recipe],
            "loader_artifact": self.loader_artifact,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataStateDescriptor":
        return cls(
            state_id=d.get("state_id", ""),
            selected_entries=tuple(d.get("selected_entries", ())),
            recipe=tuple(dict(step) for step in d.get("recipe", ())),
            loader_artifact=d.get("loader_artifact", ""),
        )


@dataclass
class MemoryRecord:
    """One executed node's outcome.

    Red records carry the pool entry ids they contributed; black
    records carry the data state and its downstream score. Either kind
    stores diagnostics, and findings may be appended later; every other
    field is settled once the record is written.
    """

    node: NodeId
    kind: str  # "red" or "black"
    delta_pool_ids: tuple[str, ...] = ()
    data_state: Optional[DataStateDescriptor] = None
    score: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)
    findings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.kind not in ("red", "black"):
            raise ValueError(f"record kind must be red or black, got {self.kind!r}")
        if self.kind == "red" and (self.data_state is not None or self.score is not None):
            raise ValueError("red records carry pool ids, not data states or scores")
        if self.kind == "black" and self.delta_pool_ids:
            raise ValueError("black records do not contribute pool entries")

    def to_dict(self) -> dict:
        d: dict = {"node": self.node, "kind": self.kind}
        if self.kind == "red":
            d["delta_pool_ids"] = list(self.delta_pool_ids)
        else:
            d["data_state"] = self.data_state.to_dict() if self.data_state else None
            if self.score is not None:
                d["score"] = self.score
        d["diagnostics"] = self.diagnostics
        d["findings"] = list(self.findings)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryRecord":
        state = d.get("data_state")
        return cls(
            node=d["node"],
            kind=d["kind"],
            delta_pool_ids=tuple(d.get("delta_pool_ids", ())),
            data_state=DataStateDescriptor.from_dict(state) if state else None,
            score=d.get("score"),
            diagnostics=dict(d.get("diagnostics", {})),
            findings=list(d.get("findings", [])),
        )


def _creation_key(node_id: NodeId) -> tuple:
    # Node ids embed their creation sequence ("t3.n12"); fall back to
    # lexicographic order for foreign id schemes.
    _, _, suffix = node_id.rpartition(".n")
    if suffix.isdigit():
        return (0, int(suffix), node_id)
    return (1, 0, node_id)


class GlobalMemory:
    """One record per completed node, append-only, queried by context rule."""

    def __init__(self) -> None:
        self._records: dict[NodeId, MemoryRecord] = {}
        self._order: list[NodeId] = []

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, node_id: NodeId) -> bool:
        return node_id in self._records

    def write_record(self, record: MemoryRecord) -> None:
        if record.node in self._records:
            raise MemoryStoreError(f"node {record.node} already has a memory record")
        self._records[record.node] = record
        self._order.append(record.node)

    def get(self, node_id: NodeId) -> Optional[MemoryRecord]:
        return self._records.get(node_id)

    def records(self) -> list[MemoryRecord]:
        """All records in write order."""
        return [self._records[nid] for nid in self._order]

    def default_context(self, tree: Tree, node_id: NodeId) -> list[MemoryRecord]:
        """Records visible to ``node_id``: parent first, then siblings.

        Siblings appear in creation order and only if they have
        completed; the node's own record is never included.
        """
        node = tree.node(node_id)
        out: list[MemoryRecord] = []
        if node.parent is not None and node.parent in self._records:
            out.append(self._records[node.parent])
        for sib in sorted(tree.siblings(node_id), key=lambda nid: tree.node(nid).seq):
            if sib in self._records:
                out.append(self._records[sib])
        return out

    def query_records(
        self,
        kind: Optional[str] = None,
        min_score: Optional[float] = None,
        branch_root: Optional[NodeId] = None,
        tree: Optional[Tree] = None,
    ) -> list[MemoryRecord]:
        """Structural filter over all records, ordered by node creation.

        ``min_score`` drops records without a score; ``branch_root``
        needs the tree to resolve subtree membership.
        """
        allowed: Optional[set[NodeId]] = None
        if branch_root is not None:
            if tree is None:
                raise ValueError("branch_root filter requires the tree")
            allowed = tree.subtree(branch_root)
        out = []
        for record in self._records.values():
            if kind is not None and record.kind != kind:
                continue
            if min_score is not None and (record.score is None or record.score < min_score):
                continue
            if allowed is not None and record.node not in allowed:
                continue
            out.append(record)
        out.sort(key=lambda r: _creation_key(r.node))
        return out

    def append_finding(self, node_id: NodeId, text: str) -> None:
        """Write an observation back onto an existing record, in order."""
        record = self._records.get(node_id)
        if record is None:
            raise MemoryStoreError(f"no record for {node_id}; findings attach to executed nodes")
        record.findings.append(text)

    # -- persistence ------------------------------------------------------

    def append_to(self, path: str, record: MemoryRecord) -> None:
        """Append one record to the JSONL store; the file is never rewritten."""
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")

    @classmethod
    def read_store(cls, path: str) -> "GlobalMemory":
        memory = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                memory.write_record(MemoryRecord.from_dict(json.loads(line)))
        return memory