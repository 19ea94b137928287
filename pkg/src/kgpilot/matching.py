"""Fine-grained type taxonomy and candidate/simulated-answer matching.

Every backend shares one decision rule (see :func:`decide`):

* no shared coarse type  -> never a match, whatever the text says
* shared fine type       -> match when ``score >= tau``
* shared coarse type only -> match when ``score >= tau_coarse``
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping

from kgpilot.graph import Entity
from kgpilot.llm import BackendError, ChatClient, extract_json

if TYPE_CHECKING:
    from kgpilot.planning import SimulatedAnswer

logger = logging.getLogger(__name__)

FALLBACK_TYPE = "other"
DEFAULT_TAU = 0.5
DEFAULT_TAU_COARSE = 0.8
ENTITY_OPEN, ENTITY_CLOSE = "[E]", "[/E]"


class TypeTaxonomy:
    """Slash-separated type hierarchy, e.g. ``person/artist/music``."""

    def __init__(self, labels: Iterable[str]):
        ordered: list[str] = []
        seen: set[str] = set()
        for raw in labels:
            label = raw.strip().strip("/")
            if not label:
                continue
            if label in seen:
                raise ValueError(f"duplicate taxonomy label: {label!r}")
            seen.add(label)
            ordered.append(label)
        for label in ordered:
            for anc in ancestors(label):
                if anc not in seen:
                    raise ValueError(f"label {label!r} is missing ancestor {anc!r}")
        self.labels: tuple[str, ...] = tuple(ordered)
        self._set = frozenset(ordered)

    @classmethod
    def from_file(cls, path: str | Path) -> "TypeTaxonomy":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())

    def __contains__(self, label: object) -> bool:
        return label in self._set

    def __len__(self) -> int:
        return len(self.labels)

    def coarse_labels(self) -> list[str]:
        return [l for l in self.labels if "/" not in l]

    def normalize(self, label: str) -> str | None:
        """Return ``label`` or its deepest known ancestor; None if even the root is unknown."""
        label = label.strip().strip("/").lower()
        while label:
            if label in self._set:
                return label
            label = label.rpartition("/")[0]
        return None


@lru_cache(maxsize=1)
def default_taxonomy() -> TypeTaxonomy:
    text = resources.files("kgpilot").joinpath("assets/taxonomy.txt").read_text(encoding="utf-8")
    return TypeTaxonomy(text.splitlines())


def coarse(label: str) -> str:
    return label.split("/", 1)[0]


def ancestors(label: str) -> list[str]:
    parts = label.split("/")
    return ["/".join(parts[:i]) for i in range(1, len(parts))]


def _common_prefix(a: str, b: str) -> str:
    shared = []
    for x, y in zip(a.split("/"), b.split("/")):
        if x != y:
            break
        shared.append(x)
    return "/".join(shared)


def type_overlap(candidate_types: Iterable[str], expected_types: Iterable[str]) -> tuple[frozenset[str], frozenset[str]]:
    """(fine, coarse) shared labels.

    Two labels share a fine type when their common prefix is at least two
    levels deep, so siblings such as ``person/artist/actor`` and
    ``person/artist/music`` overlap at ``person/artist``.
    """
    fine: set[str] = set()
    coarse_shared: set[str] = set()
    expected = list(expected_types)
    for c in candidate_types:
        for x in expected:
            prefix = _common_prefix(c, x)
            if not prefix:
                continue
            coarse_shared.add(coarse(prefix))
            if "/" in prefix:
                fine.add(prefix)
    return frozenset(fine), frozenset(coarse_shared)


def types_compatible(entity_types: Iterable[str], expected_types: Iterable[str]) -> bool:
    """True when some entity label equals, refines, or generalises an expected label.

    The bare fallback root never satisfies a constraint on its own.
    """
    expected = list(expected_types)
    for t in entity_types:
        for x in expected:
            prefix = _common_prefix(t, x)
            if prefix and prefix in (t, x) and prefix != FALLBACK_TYPE:
                return True
    return False


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def tokens(text: str) -> set[str]:
    return set(text.lower().split())


@dataclass(frozen=True)
class MatchVerdict:
    matched: bool
    score: float
    type_overlap: frozenset[str] = field(default_factory=frozenset)
    rationale: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if not isinstance(self.type_overlap, frozenset):
            object.__setattr__(self, "type_overlap", frozenset(self.type_overlap))

    def to_dict(self) -> dict:
        return {
            "matched": self.matched,
            "score": self.score,
            "type_overlap": sorted(self.type_overlap),
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MatchVerdict":
        return cls(bool(d["matched"]), float(d["score"]), frozenset(d.get("type_overlap", ())), d.get("rationale", ""))


UNMATCHED = MatchVerdict(False, 0.0, frozenset(), "no entry")


def decide(
    score: float,
    candidate_types: Iterable[str],
    expected_types: Iterable[str],
    tau: float = DEFAULT_TAU,
    tau_coarse: float = DEFAULT_TAU_COARSE,
) -> MatchVerdict:
    fine, coarse_shared = type_overlap(candidate_types, expected_types)
    score = min(1.0, max(0.0, score))
    if not coarse_shared:
        return MatchVerdict(False, score, frozenset(), "type gate: no shared coarse type")
    if fine and score >= tau:
        return MatchVerdict(True, score, fine, f"fine type match, score {score:.3f} >= {tau}")
    if score >= tau_coarse:
        return MatchVerdict(True, score, fine or coarse_shared, f"coarse type match, score {score:.3f} >= {tau_coarse}")
    return MatchVerdict(False, score, fine or coarse_shared, f"score {score:.3f} below threshold")


class Matcher(ABC):
    """Decides whether a candidate entity fits a simulated answer.

    ``key`` identifies what is being matched (a sub-question index such as
    ``1`` or a qualifier key such as ``"r1"``). ``context`` carries the
    incident triple text; backends may ignore it.
    """

    deterministic = True

    def type_of(self, entity: Entity) -> frozenset[str]:
        if entity.fine_types:
            return entity.fine_types
        inferred = self._infer_types(entity)
        return inferred or frozenset([FALLBACK_TYPE])

    def _infer_types(self, entity: Entity) -> frozenset[str]:
        return frozenset()

    @abstractmethod
    def match(
        self,
        candidate: Entity,
        sim: "SimulatedAnswer",
        spec: str = "",
        *,
        key: int | str | None = None,
        context: str = "",
    ) -> MatchVerdict: ...


def _require_types(sim: "SimulatedAnswer") -> None:
    if not sim.expected_types:
        raise ValueError("simulated answer must carry at least one expected type")


class TableMatcher(Matcher):
    """Verdicts looked up from a fixture; anything absent is unmatched.

    Fixture (JSON)::

        {"types": {"entity_id": ["person/artist"]},
         "entries": [{"entity": "e1", "key": 1, "matched": true, "score": 0.9}]}
    """

    def __init__(
        self,
        entries: Mapping[tuple[str, str], tuple[bool, float]],
        types: Mapping[str, Iterable[str]] | None = None,
    ):
        self._entries = {(e, str(k)): (bool(m), float(s)) for (e, k), (m, s) in entries.items()}
        self._types = {eid: frozenset(ts) for eid, ts in (types or {}).items()}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TableMatcher":
        entries: dict[tuple[str, str], tuple[bool, float]] = {}
        for row in doc.get("entries", []):
            k = (row["entity"], str(row["key"]))
            if k in entries:
                raise ValueError(f"duplicate table entry {k}")
            entries[k] = (bool(row["matched"]), float(row.get("score", 1.0 if row["matched"] else 0.0)))
        return cls(entries, doc.get("types", {}))

    @classmethod
    def from_file(cls, path: str | Path) -> "TableMatcher":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {
            "types": {eid: sorted(ts) for eid, ts in sorted(self._types.items())},
            "entries": [
                {"entity": e, "key": k, "matched": m, "score": s}
                for (e, k), (m, s) in sorted(self._entries.items())
            ],
        }

    def _infer_types(self, entity: Entity) -> frozenset[str]:
        return self._types.get(entity.id, frozenset())

    def match(self, candidate, sim, spec="", *, key=None, context=""):
        _require_types(sim)
        hit = self._entries.get((candidate.id, str(key)))
        if hit is None:
            return UNMATCHED
        matched, score = hit
        fine, coarse_shared = type_overlap(self.type_of(candidate), sim.expected_types)
        return MatchVerdict(matched, score, fine or coarse_shared, "table entry")


class LexicalMatcher(Matcher):
    """Token-set Jaccard between (label + description) and (simulated text + spec), behind the type gate."""

    def __init__(self, tau: float = DEFAULT_TAU, tau_coarse: float = DEFAULT_TAU_COARSE):
        if not 0.0 <= tau < tau_coarse <= 1.0:
            raise ValueError("need 0 <= tau < tau_coarse <= 1")
        self.tau = tau
        self.tau_coarse = tau_coarse

    def score(self, candidate: Entity, sim: "SimulatedAnswer", spec: str = "") -> float:
        return jaccard(
            tokens(f"{candidate.label} {candidate.description}"),
            tokens(f"{sim.text} {spec}"),
        )

    def match(self, candidate, sim, spec="", *, key=None, context=""):
        _require_types(sim)
        return decide(self.score(candidate, sim, spec), self.type_of(candidate), sim.expected_types, self.tau, self.tau_coarse)


class ConstantMatcher(Matcher):
    """Returns the same verdict for every candidate. ``ConstantMatcher()`` admits everything."""

    def __init__(self, matched: bool = True, score: float = 1.0):
        self.verdict = MatchVerdict(matched, score, frozenset(), "constant")

    def match(self, candidate, sim, spec="", *, key=None, context=""):
        _require_types(sim)
        return self.verdict


class NoisyMatcher(Matcher):
    """Wraps a matcher and flips matched verdicts to unmatched at a fixed rate.

    The flip for a given (seed, entity, key) is a pure function of those
    values, so results do not depend on call order or concurrency.
    """

    def __init__(self, inner: Matcher, false_negative_rate: float, seed: int = 0):
        if not 0.0 <= false_negative_rate <= 1.0:
            raise ValueError("false_negative_rate must be in [0, 1]")
        self.inner = inner
        self.rate = false_negative_rate
        self.seed = seed

    def type_of(self, entity):
        return self.inner.type_of(entity)

    def _flip(self, entity_id: str, key) -> bool:
        digest = hashlib.sha256(f"{self.seed}\x00{entity_id}\x00{key}".encode()).digest()
        return random.Random(digest).random() < self.rate

    def match(self, candidate, sim, spec="", *, key=None, context=""):
        verdict = self.inner.match(candidate, sim, spec, key=key, context=context)
        if verdict.matched and self._flip(candidate.id, key):
            return MatchVerdict(False, 0.0, verdict.type_overlap, "injected false negative")
        return verdict


def mark_entity(entity: Entity) -> str:
    text = f"{ENTITY_OPEN} {entity.name} {ENTITY_CLOSE}"
    if entity.description:
        text += f" {entity.description}"
    return text


class RemoteMatcher(Matcher):
    """Typing and scoring delegated to a chat-completions service.

    The remote side only supplies types and a similarity score; the verdict
    itself always goes through :func:`decide`.
    """

    deterministic = False

    def __init__(
        self,
        client: ChatClient,
        taxonomy: TypeTaxonomy | None = None,
        tau: float = DEFAULT_TAU,
        tau_coarse: float = DEFAULT_TAU_COARSE,
    ):
        self.client = client
        self.taxonomy = taxonomy or default_taxonomy()
        self.tau = tau
        self.tau_coarse = tau_coarse

    def _ask(self, system: str, user: str) -> dict:
        reply = self.client.complete([{"role": "system", "content": system}, {"role": "user", "content": user}])
        try:
            doc = extract_json(reply.text)
        except ValueError as exc:
            raise BackendError(f"matcher reply is not JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise BackendError("matcher reply must be a JSON object")
        return doc

    def _infer_types(self, entity: Entity) -> frozenset[str]:
        system = (
            "You are a fine-grained entity typing model. Assign the entity between "
            f"{ENTITY_OPEN} and {ENTITY_CLOSE} one or more labels from this list:\n"
            + "\n".join(self.taxonomy.labels)
            + '\nReply with JSON: {"types": [...]}'
        )
        doc = self._ask(system, mark_entity(entity))
        labels = (self.taxonomy.normalize(str(t)) for t in doc.get("types", []))
        return frozenset(l for l in labels if l)

    def match(self, candidate, sim, spec="", *, key=None, context=""):
        _require_types(sim)
        system = (
            "Rate how well the entity between "
            f"{ENTITY_OPEN} and {ENTITY_CLOSE} fits the expected answer, "
            'from 0 to 1. Reply with JSON: {"score": <number>}'
        )
        user = (
            f"Entity: {mark_entity(candidate)}\n"
            f"Expected answer: {sim.text}\n"
            f"Expected types: {', '.join(sorted(sim.expected_types))}\n"
            f"Guidance: {spec}\n"
            f"Context: {context}"
        )
        doc = self._ask(system, user)
        try:
            score = float(doc["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"matcher reply lacks a numeric score: {doc}") from exc
        return decide(score, self.type_of(candidate), sim.expected_types, self.tau, self.tau_coarse)
