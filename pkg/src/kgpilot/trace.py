"""Line-delimited JSON trace of every planning, exploration and reflection decision."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from kgpilot.metrics import CostLedger

KINDS = frozenset({"plan", "instruction", "expand", "prune", "problem", "path", "aggregate", "reflect", "answer"})


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    iteration: int
    kind: str
    payload: dict[str, Any]
    ledger: dict[str, Any]

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "iteration": self.iteration, "kind": self.kind, "payload": self.payload, "ledger": self.ledger},
            ensure_ascii=False,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        d = json.loads(line)
        return cls(d["seq"], d["iteration"], d["kind"], d["payload"], d["ledger"])


class Tracer:
    def __init__(self, ledger: CostLedger | None = None):
        self.ledger = ledger
        self.iteration = 0
        self.events: list[TraceEvent] = []
        self._lock = threading.Lock()

    def emit(self, kind: str, payload: dict[str, Any]) -> TraceEvent:
        if kind not in KINDS:
            raise ValueError(f"unknown trace event kind: {kind!r}")
        snap = self.ledger.snapshot() if self.ledger is not None else {}
        with self._lock:
            event = TraceEvent(len(self.events) + 1, self.iteration, kind, payload, snap)
            self.events.append(event)
        return event

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)

    def dumps(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8", newline="\n")


def read_trace(path: str | Path) -> list[TraceEvent]:
    with Path(path).open(encoding="utf-8") as fh:
        return [TraceEvent.from_json(line) for line in fh if line.strip()]


def replay_answer(events: Iterable[TraceEvent]) -> list[str] | None:
    """Rebuild the final answer list from ``aggregate`` events alone.

    Uses the last aggregate event: intersect validated terminals across
    seeds, falling back to the union when that is empty; rank by best
    path score, then id.
    Returns None when the last aggregation validated nothing.
    """
    last = None
    for e in events:
        if e.kind == "aggregate":
            last = e
    if last is None:
        return None
    validated: dict[str, list[dict]] = last.payload["validated"]
    per_seed = [{p["terminal"] for p in paths} for paths in validated.values()]
    if not per_seed or not any(per_seed):
        return None
    best: dict[str, float] = {}
    for paths in validated.values():
        for p in paths:
            best[p["terminal"]] = max(best.get(p["terminal"], 0.0), p["score"])
    pool = set.intersection(*per_seed) or set(best)
    return sorted(pool, key=lambda eid: (-best[eid], eid))
