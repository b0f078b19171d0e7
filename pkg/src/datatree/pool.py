"""Shared append-only pool of discovered dataset manifests.

Discovery nodes contribute manifests; exploitation nodes select from
them. Entries are never mutated or removed, so a watermark taken at any
moment names a stable prefix that later readers see unchanged. The
append boundary is also the safety net: duplicate content and
blocklisted sources are refused here even if an executor forgot to
screen them.
"""

from __future__ import annotations

import fnmatch
import json
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

from .tree import NodeId, NodeKind

EntryId = str

# Serialization order for manifest rows, fixed so identical pools
# produce byte-identical manifest files.
_FIELD_ORDER = (
    "id",
    "source_pointer",
    "description",
    "format",
    "schema_summary",
    "metadata",
    "scale",
    "modality",
    "task_relevance",
    "screening_notes",
    "provenance",
    "discovered_by",
)

_GLOB_CHARS = set("*?[")


class PoolError(Exception):
    pass


@dataclass(frozen=True)
class Provenance:
    url: str = ""
    timestamp: str = ""
    content_hash: str = ""

    def complete(self) -> bool:
        return bool(self.url) and bool(self.timestamp) and bool(self.content_hash)

    def to_dict(self) -> dict:
        return {"url": self.url, "timestamp": self.timestamp, "content_hash": self.content_hash}

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        return cls(
            url=d.get("url", ""),
            timestamp=d.get("timestamp", ""),
            content_hash=d.get("content_hash", ""),
        )


@dataclass(frozen=True)
class PoolEntry:
    """Manifest for one discovered dataset; the payload itself stays external."""

    id: EntryId
    source_pointer: str
    description: str = ""
    format: str = ""
    schema_summary: str = ""
    metadata: dict = field(default_factory=dict)
    scale: int = 0
    modality: str = ""
    task_relevance: str = ""
    screening_notes: str = ""
    provenance: Provenance = field(default_factory=Provenance)
    discovered_by: NodeId = ""

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in _FIELD_ORDER}
        d["provenance"] = self.provenance.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PoolEntry":
        return cls(
            id=d.get("id", ""),
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
            discovered_by=d.get("discovered_by", ""),
        )


def is_blocklisted(source_pointer: str, blocklist: list[str]) -> bool:
    """Case-insensitive substring or glob match against any pattern."""
    pointer = source_pointer.lower()
    for pattern in blocklist:
        if not pattern:
            continue
        pat = pattern.lower()
        if _GLOB_CHARS & set(pat):
            if fnmatch.fnmatchcase(pointer, pat):
                return True
        elif pat in pointer:
            return True
    return False


@dataclass(frozen=True)
class PoolFilter:
    modality: Optional[str] = None
    format: Optional[str] = None
    relevance_substring: Optional[str] = None

    def matches(self, entry: PoolEntry) -> bool:
        if self.modality is not None and entry.modality != self.modality:
            return False
        if self.format is not None and entry.format != self.format:
            return False
        if self.relevance_substring is not None:
            if self.relevance_substring.lower() not in entry.task_relevance.lower():
                return False
        return True


class DataPool:
    """Append-only entry store with content-hash dedup and a blocklist."""

    def __init__(self, blocklist: Optional[list[str]] = None):
        self._entries: list[PoolEntry] = []
        self._by_id: dict[EntryId, PoolEntry] = {}
        self._hashes: set[str] = set()
        self.blocklist: list[str] = list(blocklist or [])

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, entry_id: EntryId) -> bool:
        return entry_id in self._by_id

    @property
    def watermark(self) -> int:
        """Count of appended entries; names the stable prefix [0, watermark)."""
        return len(self._entries)

    def get(self, entry_id: EntryId) -> PoolEntry:
        try:
            return self._by_id[entry_id]
        except KeyError:
            raise PoolError(f"unknown pool entry {entry_id!r}") from None

    def entries(self, upto: Optional[int] = None) -> Iterator[PoolEntry]:
        """Entries in append order, optionally cut at a watermark."""
        end = len(self._entries) if upto is None else min(upto, len(self._entries))
        return iter(self._entries[:end])

    def query(self, filt: Optional[PoolFilter] = None) -> list[PoolEntry]:
        if filt is None:
            return list(self._entries)
        return [e for e in self._entries if filt.matches(e)]

    def append_entries(
        self, entries: list[PoolEntry], from_node: NodeId, from_kind: NodeKind
    ) -> tuple[list[EntryId], list[str]]:
        """Append manifests discovered by one red node.

        Draft entries may arrive without ids; the pool mints them in
        append order. Duplicated content and blocklisted sources are
        skipped, not errors: the returned notes say what was dropped
        and why. Only the contributing node's kind is an error, since
        exploitation nodes must never write here.
        """
        if from_kind != NodeKind.RED:
            raise PoolError(f"only red nodes append entries; {from_node} is {from_kind.value}")
        added: list[EntryId] = []
        notes: list[str] = []
        for draft in entries:
            if is_blocklisted(draft.source_pointer, self.blocklist) or is_blocklisted(
                draft.provenance.url, self.blocklist
            ):
                notes.append(f"blocklisted source skipped: {draft.source_pointer}")
                continue
            chash = draft.provenance.content_hash
            if chash and chash in self._hashes:
                notes.append(f"duplicate content skipped: {draft.source_pointer}")
                continue
            entry = replace(draft, id=f"p{len(self._entries)}", discovered_by=from_node)
            self._insert(entry)
            added.append(entry.id)
        return added, notes

    def _insert(self, entry: PoolEntry) -> None:
        self._entries.append(entry)
        self._by_id[entry.id] = entry
        if entry.provenance.content_hash:
            self._hashes.add(entry.provenance.content_hash)

    def append_restored(self, entry: PoolEntry) -> None:
        """Re-append an entry verbatim during replay; ids must line up."""
        expected = f"p{len(self._entries)}"
        if entry.id != expected:
            raise PoolError(
                f"replayed entry id {entry.id!r} does not match append order ({expected!r})"
            )
        self._insert(entry)

    # -- manifest file ----------------------------------------------------

    def write_manifest(self, path: str, upto: Optional[int] = None) -> int:
        """Write entries as one JSON object per line, fixed field order.

        Returns the watermark the file represents.
        """
        end = len(self._entries) if upto is None else min(upto, len(self._entries))
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self._entries[:end]:
                fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")
        return end

    @classmethod
    def read_manifest(cls, path: str, blocklist: Optional[list[str]] = None) -> "DataPool":
        pool = cls(blocklist=blocklist)
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                pool.append_restored(PoolEntry.from_dict(json.loads(line)))
        return pool