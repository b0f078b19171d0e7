"""Append-only event log.

The log is the authoritative record of a run: every state change lands
here as one JSON line before it is considered to have happened, and
resuming a run means replaying the log from the top. Snapshots and
in-memory state are conveniences that must always be reproducible from
these lines alone.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Iterator, Optional

EVENT_KINDS = frozenset(
    {
        "node_added",
        "node_started",
        "node_completed",
        "reward_backprop",
        "pool_append",
        "memory_write",
        "finding",
        "decay_step",
        "budget_update",
    }
)


class CorruptedLogError(Exception):
    """The log has a malformed, unordered, or truncated line.

    ``last_valid_seq`` is the sequence number of the last event that
    parsed and validated cleanly (-1 when none did).
    """

    def __init__(self, message: str, last_valid_seq: int):
        super().__init__(f"{message} (last valid seq: {last_valid_seq})")
        self.last_valid_seq = last_valid_seq


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    data: dict
    ts: float = 0.0  # wall clock, informational only; replay ignores it


class EventLog:
    """Writer for one run's event stream."""

    def __init__(self, path: str, next_seq: int = 0):
        self.path = path
        self._next_seq = next_seq
        self._fh = open(path, "a", encoding="utf-8")

    @property
    def next_seq(self) -> int:
        return self._next_seq

    def append(self, kind: str, data: dict) -> Event:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        event = Event(seq=self._next_seq, kind=kind, data=data, ts=time.time())
        line = json.dumps(
            {"seq": event.seq, "kind": event.kind, "ts": event.ts, "data": event.data},
            ensure_ascii=False,
        )
        self._fh.write(line + "\n")
        self._fh.flush()
        self._next_seq += 1
        return event

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "EventLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @classmethod
    def resume(cls, path: str) -> "EventLog":
        """Open an existing log for appending after the last valid event."""
        events = read_events(path)
        next_seq = events[-1].seq + 1 if events else 0
        return cls(path, next_seq=next_seq)


def read_events(path: str) -> list[Event]:
    """Parse and validate a whole log.

    Sequence numbers must increase by exactly one from 0; any parse
    failure, schema violation, or ordering gap raises CorruptedLogError
    pointing at the last line that was still good.
    """
    events: list[Event] = []
    last_valid = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                obj = json.loads(stripped)
            except json.JSONDecodeError:
                raise CorruptedLogError(f"unparseable event at line {lineno}", last_valid)
            if not isinstance(obj, dict) or "seq" not in obj or "kind" not in obj:
                raise CorruptedLogError(f"event at line {lineno} missing seq or kind", last_valid)
            if obj["kind"] not in EVENT_KINDS:
                raise CorruptedLogError(
                    f"unknown event kind {obj['kind']!r} at line {lineno}", last_valid
                )
            seq = obj["seq"]
            if not isinstance(seq, int) or seq != last_valid + 1:
                raise CorruptedLogError(
                    f"out-of-order seq {seq!r} at line {lineno}", last_valid
                )
            events.append(
                Event(seq=seq, kind=obj["kind"], data=obj.get("data", {}), ts=obj.get("ts", 0.0))
            )
            last_valid = seq
    return events


def iter_valid_events(path: str) -> Iterator[Event]:
    for event in read_events(path):
        yield event