"""In-memory triple store with adjacency indices and entity metadata.

Graphs are loaded from two tab-separated files:

* triples: ``head \\t relation \\t tail``
* metadata (optional): ``id \\t label \\t comma,separated,types \\t description``
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Literal, Mapping

logger = logging.getLogger(__name__)

Direction = Literal["outgoing", "incoming"]


class GraphError(Exception):
    """Base class for graph loading and lookup errors."""


class GraphFormatError(GraphError):
    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class DuplicateEntityError(GraphError):
    pass


class EntityNotFoundError(GraphError, KeyError):
    def __init__(self, entity_id: str):
        super().__init__(f"unknown entity: {entity_id!r}")
        self.entity_id = entity_id

    def __str__(self) -> str:
        return self.args[0]


def _check_field(value: str, what: str) -> None:
    if "\t" in value or "\n" in value:
        raise ValueError(f"{what} contains a tab or line feed: {value!r}")


@dataclass(frozen=True)
class Entity:
    id: str
    label: str = ""
    description: str = ""
    fine_types: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("entity id must be non-empty")
        for name in ("id", "label", "description"):
            _check_field(getattr(self, name), f"entity {name}")
        for t in self.fine_types:
            _check_field(t, "type label")
        if not isinstance(self.fine_types, frozenset):
            object.__setattr__(self, "fine_types", frozenset(self.fine_types))

    @property
    def name(self) -> str:
        return self.label or self.id


@dataclass(frozen=True, order=True)
class Triple:
    head: str
    relation: str
    tail: str

    def __post_init__(self) -> None:
        if not self.relation:
            raise ValueError("relation must be non-empty")

    def __str__(self) -> str:
        return f"{self.head} -{self.relation}-> {self.tail}"

    def as_list(self) -> list[str]:
        return [self.head, self.relation, self.tail]


class KnowledgeGraph:
    """Immutable typed multigraph.

    ``out_index[head][relation]`` and ``in_index[tail][relation]`` are frozen
    sets, built once in the constructor. Duplicate triples are dropped.
    """

    def __init__(self, entities: Iterable[Entity], triples: Iterable[Triple]):
        ents: dict[str, Entity] = {}
        for e in entities:
            if e.id in ents:
                raise DuplicateEntityError(f"duplicate entity id: {e.id!r}")
            ents[e.id] = e

        seen: set[Triple] = set()
        ordered: list[Triple] = []
        out_index: dict[str, dict[str, set[str]]] = {}
        in_index: dict[str, dict[str, set[str]]] = {}
        for t in triples:
            if t in seen:
                continue
            for end in (t.head, t.tail):
                if end not in ents:
                    raise EntityNotFoundError(end)
            seen.add(t)
            ordered.append(t)
            out_index.setdefault(t.head, {}).setdefault(t.relation, set()).add(t.tail)
            in_index.setdefault(t.tail, {}).setdefault(t.relation, set()).add(t.head)

        self._entities = ents
        self._triples = tuple(ordered)
        self._out = {h: {r: frozenset(ts) for r, ts in rels.items()} for h, rels in out_index.items()}
        self._in = {t: {r: frozenset(hs) for r, hs in rels.items()} for t, rels in in_index.items()}
        self._out_degree = {h: sum(len(ts) for ts in rels.values()) for h, rels in self._out.items()}

    @property
    def entities(self) -> Mapping[str, Entity]:
        return self._entities

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    def __len__(self) -> int:
        return len(self._entities)

    def __contains__(self, entity_id: object) -> bool:
        return entity_id in self._entities

    def __iter__(self) -> Iterator[str]:
        return iter(self._entities)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self._entities == other._entities and set(self._triples) == set(other._triples)

    def __repr__(self) -> str:
        return f"KnowledgeGraph(entities={len(self._entities)}, triples={len(self._triples)})"

    def entity(self, entity_id: str) -> Entity:
        try:
            return self._entities[entity_id]
        except KeyError:
            raise EntityNotFoundError(entity_id) from None

    def out_degree(self, entity_id: str) -> int:
        return self._out_degree.get(entity_id, 0)

    def neighbors(self, entity_id: str, direction: Direction = "outgoing") -> dict[str, frozenset[str]]:
        if entity_id not in self._entities:
            raise EntityNotFoundError(entity_id)
        if direction == "outgoing":
            index = self._out
        elif direction == "incoming":
            index = self._in
        else:
            raise ValueError(f"direction must be 'outgoing' or 'incoming', got {direction!r}")
        return dict(index.get(entity_id, {}))

    def resolve(self, mention: str) -> str | None:
        """Map a mention to an entity id: exact id first, then case-insensitive label."""
        if mention in self._entities:
            return mention
        needle = mention.strip().casefold()
        for eid in sorted(self._entities):
            if self._entities[eid].label.casefold() == needle:
                return eid
        return None


def neighbors(g: KnowledgeGraph, entity_id: str, direction: Direction = "outgoing") -> dict[str, frozenset[str]]:
    return g.neighbors(entity_id, direction)


def extract_subgraph(g: KnowledgeGraph, seeds: Iterable[str], radius: int) -> KnowledgeGraph:
    """Induced subgraph on everything within ``radius`` undirected hops of a seed."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    seeds = list(seeds)
    for s in seeds:
        if s not in g:
            raise EntityNotFoundError(s)

    dist = {s: 0 for s in seeds}
    queue = deque(seeds)
    while queue:
        node = queue.popleft()
        if dist[node] == radius:
            continue
        for direction in ("outgoing", "incoming"):
            for ends in g.neighbors(node, direction).values():
                for nxt in ends:
                    if nxt not in dist:
                        dist[nxt] = dist[node] + 1
                        queue.append(nxt)

    keep = sorted(dist)
    triples = [
        Triple(head, relation, tail)
        for head in keep
        for relation, tails in sorted(g.neighbors(head, "outgoing").items())
        for tail in sorted(tails)
        if tail in dist
    ]
    return KnowledgeGraph((g.entities[eid] for eid in keep), triples)


def _read_lines(path: Path) -> Iterator[tuple[int, str]]:
    with path.open("r", encoding="utf-8", newline="\n") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw[:-1] if raw.endswith("\n") else raw
            if not line.strip():
                continue
            yield line_no, line


def load_graph(triples_path: str | Path, meta_path: str | Path | None = None) -> KnowledgeGraph:
    triples_path = Path(triples_path)
    triples: list[Triple] = []
    for line_no, line in _read_lines(triples_path):
        fields = line.split("\t")
        if len(fields) != 3:
            raise GraphFormatError(triples_path, line_no, f"expected 3 tab-separated fields, got {len(fields)}")
        head, relation, tail = fields
        if not head or not relation or not tail:
            raise GraphFormatError(triples_path, line_no, "empty field")
        triples.append(Triple(head, relation, tail))

    entities: dict[str, Entity] = {}
    if meta_path is not None:
        meta_path = Path(meta_path)
        for line_no, line in _read_lines(meta_path):
            fields = line.split("\t")
            if len(fields) != 4:
                raise GraphFormatError(meta_path, line_no, f"expected 4 tab-separated fields, got {len(fields)}")
            eid, label, types, description = fields
            if not eid:
                raise GraphFormatError(meta_path, line_no, "empty entity id")
            if eid in entities:
                raise DuplicateEntityError(f"{meta_path}:{line_no}: duplicate entity id {eid!r}")
            fine_types = frozenset(t.strip() for t in types.split(",") if t.strip())
            entities[eid] = Entity(eid, label, description, fine_types)

    for t in triples:
        for eid in (t.head, t.tail):
            if eid not in entities:
                entities[eid] = Entity(eid, eid)

    g = KnowledgeGraph(entities.values(), triples)
    logger.debug("loaded %r from %s", g, triples_path)
    return g


def dump_graph(g: KnowledgeGraph, triples_path: str | Path, meta_path: str | Path) -> None:
    with Path(triples_path).open("w", encoding="utf-8", newline="\n") as fh:
        for t in g.triples:
            fh.write(f"{t.head}\t{t.relation}\t{t.tail}\n")
    with Path(meta_path).open("w", encoding="utf-8", newline="\n") as fh:
        for eid in sorted(g.entities):
            e = g.entities[eid]
            fh.write(f"{e.id}\t{e.label}\t{','.join(sorted(e.fine_types))}\t{e.description}\n")


def digest(g: KnowledgeGraph, limit: int = 40) -> str:
    """Compact one-line rendering of a (sub)graph for clue prompts."""
    parts = [f"{g.entities[t.head].name} -{t.relation}-> {g.entities[t.tail].name}" for t in sorted(g.triples)]
    if not parts:
        parts = [g.entities[e].name for e in sorted(g.entities)]
    extra = len(parts) - limit
    text = "; ".join(parts[:limit])
    if extra > 0:
        text += f"; ... (+{extra} more)"
    return text
