"""Constrained breadth-first exploration with representative-based semantic pruning.

Forward-search instruction ``i`` governs BFS level ``i``. At every frontier
entity each relation is judged once, through its representative tail; an
admitted relation expands to all of its tails (top-B by per-tail score when
there are more than B), a rejected one is pruned wholesale.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import prod
from typing import Any, Iterable, Sequence

from kgpilot.graph import EntityNotFoundError, KnowledgeGraph, Triple, digest, extract_subgraph
from kgpilot.llm import BackendError
from kgpilot.matching import Matcher, MatchVerdict
from kgpilot.metrics import CostLedger
from kgpilot.planning import Instruction, Plan, PreconditionError, SimulatedAnswer
from kgpilot.trace import Tracer

logger = logging.getLogger(__name__)

# incoming edges are walked as "~relation", so paths still chain head -> tail
INVERSE_PREFIX = "~"


@dataclass(frozen=True)
class ExploreConfig:
    depth_cap: int = 3
    branch_threshold: int | None = 8  # None: unbounded
    include_incoming: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if self.depth_cap < 1:
            raise ValueError("depth_cap must be >= 1")
        if self.branch_threshold is not None and self.branch_threshold < 1:
            raise ValueError("branch_threshold must be >= 1 or None")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class QualifierCheck:
    qualifier: int
    verdict: MatchVerdict


@dataclass(frozen=True)
class PathStep:
    triple: Triple
    verdict: MatchVerdict
    qualifier_checks: tuple[QualifierCheck, ...] = ()


@dataclass(frozen=True)
class ReasoningPath:
    seed: str
    steps: tuple[PathStep, ...]

    def __post_init__(self) -> None:
        node = self.seed
        for step in self.steps:
            if step.triple.head != node:
                raise ValueError("path steps do not chain")
            node = step.triple.tail

    @property
    def terminal(self) -> str:
        return self.steps[-1].triple.tail if self.steps else self.seed

    @property
    def score(self) -> float:
        return prod(s.verdict.score for s in self.steps)

    @property
    def key(self) -> tuple[Triple, ...]:
        return tuple(s.triple for s in self.steps)

    def entities(self) -> list[str]:
        return [self.seed] + [s.triple.tail for s in self.steps]

    def render(self, g: KnowledgeGraph | None = None) -> str:
        def name(eid: str) -> str:
            return g.entities[eid].name if g is not None and eid in g else eid

        parts = [name(self.seed)]
        for s in self.steps:
            parts.append(f"-{s.triple.relation}-> {name(s.triple.tail)}")
        return " ".join(parts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "terminal": self.terminal,
            "score": self.score,
            "steps": [
                {
                    "triple": s.triple.as_list(),
                    "verdict": s.verdict.to_dict(),
                    "qualifier_checks": [{"qualifier": c.qualifier, "verdict": c.verdict.to_dict()} for c in s.qualifier_checks],
                }
                for s in self.steps
            ],
        }


class ProblemKind(str, enum.Enum):
    UNMATCHED_PATH = "UNMATCHED_PATH"
    EXCESSIVE_BRANCHING = "EXCESSIVE_BRANCHING"
    QUALIFIER_FAILURE = "QUALIFIER_FAILURE"
    DEPTH_EXHAUSTED = "DEPTH_EXHAUSTED"
    BACKEND_FAILURE = "BACKEND_FAILURE"


@dataclass(frozen=True)
class ProblemReport:
    kind: ProblemKind
    at_entity: str
    at_depth: int
    subgraph: KnowledgeGraph = field(compare=False, repr=False)
    note: str = ""

    @property
    def sort_key(self) -> tuple[int, str, str, str]:
        return (self.at_depth, self.at_entity, self.kind.value, self.note)

    def summary(self) -> str:
        return f"{self.kind.value} at {self.at_entity} (hop {self.at_depth}): {self.note}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "at_entity": self.at_entity,
            "at_depth": self.at_depth,
            "note": self.note,
            "subgraph": digest(self.subgraph),
        }


@dataclass
class ExplorationResult:
    paths: list[ReasoningPath] = field(default_factory=list)
    problems: list[ProblemReport] = field(default_factory=list)
    expansion_count: int = 0
    prune_count: int = 0
    admitted_count: int = 0

    @property
    def relations_evaluated(self) -> int:
        return self.prune_count + self.admitted_count

    def merge(self, other: "ExplorationResult") -> "ExplorationResult":
        return ExplorationResult(
            sorted(self.paths + other.paths, key=lambda p: (p.seed, p.key)),
            sorted(self.problems + other.problems, key=lambda p: p.sort_key),
            self.expansion_count + other.expansion_count,
            self.prune_count + other.prune_count,
            self.admitted_count + other.admitted_count,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "paths": [p.to_dict() for p in self.paths],
            "problems": [p.to_dict() for p in self.problems],
            "expansion_count": self.expansion_count,
            "prune_count": self.prune_count,
            "admitted_count": self.admitted_count,
        }


def _edges(g: KnowledgeGraph, entity: str, include_incoming: bool) -> list[tuple[str, frozenset[str]]]:
    edges = sorted(g.neighbors(entity, "outgoing").items())
    if include_incoming:
        edges += sorted((INVERSE_PREFIX + r, heads) for r, heads in g.neighbors(entity, "incoming").items())
    return edges


def select_representative(g: KnowledgeGraph, entity: str, relation: str) -> str:
    """Tail of ``relation`` with the largest out-degree; ties go to the smallest id."""
    if relation.startswith(INVERSE_PREFIX) and relation not in g.neighbors(entity, "outgoing"):
        tails = g.neighbors(entity, "incoming").get(relation[len(INVERSE_PREFIX):], frozenset())
    else:
        tails = g.neighbors(entity, "outgoing").get(relation, frozenset())
    if not tails:
        raise PreconditionError(f"{entity!r} has no {relation!r} edges")
    return min(tails, key=lambda t: (-g.out_degree(t), t))


@dataclass(frozen=True)
class _Edge:
    relation: str
    tail: str
    verdict: MatchVerdict
    checks: tuple[QualifierCheck, ...]


@dataclass
class _Admission:
    """Outcome of judging every relation of one entity at one hop."""

    edges: list[_Edge] = field(default_factory=list)
    events: list[tuple[str, dict[str, Any]]] = field(default_factory=list)
    problems: list[ProblemReport] = field(default_factory=list)
    pruned: int = 0
    admitted: int = 0
    invocations: int = 0


class _Explorer:
    def __init__(self, g: KnowledgeGraph, plan: Plan, matcher: Matcher, cfg: ExploreConfig):
        self.g = g
        self.plan = plan
        self.matcher = matcher
        self.cfg = cfg

    def _problem(self, kind: ProblemKind, entity: str, hop: int, note: str) -> ProblemReport:
        return ProblemReport(kind, entity, hop, extract_subgraph(self.g, [entity], 1), note)

    def _match(self, adm: _Admission, entity: str, sim: SimulatedAnswer, spec: str, key: int | str, context: str) -> tuple[MatchVerdict, bool]:
        adm.invocations += 1
        try:
            return self.matcher.match(self.g.entity(entity), sim, spec, key=key, context=context), False
        except BackendError as exc:
            logger.warning("matcher failed on %s: %s", entity, exc)
            return MatchVerdict(False, 0.0, frozenset(), f"backend failure: {exc}"), True

    def admit(self, entity: str, hop: int, instr: Instruction) -> _Admission:
        adm = _Admission()
        sim = instr.simulated_answer
        assert sim is not None
        key = instr.sub_question.index
        quals = self.plan.qualifiers_for(key)
        edges = _edges(self.g, entity, self.cfg.include_incoming)
        failed_backend = False

        if not edges:
            adm.problems.append(self._problem(ProblemKind.DEPTH_EXHAUSTED, entity, hop, "no edges to follow before reaching the final hop"))

        for relation, tails in edges:
            rep = select_representative(self.g, entity, relation)
            context = f"{self.g.entities[entity].name} {relation} {self.g.entities[rep].name}"
            verdict, failed = self._match(adm, rep, sim, instr.match_spec, key, context)
            failed_backend |= failed
            base = {"entity": entity, "relation": relation, "hop": hop, "representative": rep, "verdict": verdict.to_dict()}
            if not verdict.matched:
                adm.pruned += 1
                adm.events.append(("prune", base))
                continue

            adm.admitted += 1
            chosen = sorted(tails)
            limit = self.cfg.branch_threshold
            if limit is not None and len(chosen) > limit:
                scores = {}
                for t in chosen:
                    tail_context = f"{self.g.entities[entity].name} {relation} {self.g.entities[t].name}"
                    v, failed = self._match(adm, t, sim, instr.match_spec, key, tail_context)
                    failed_backend |= failed
                    scores[t] = v.score
                chosen = sorted(sorted(chosen, key=lambda t: (-scores[t], t))[:limit])
                adm.problems.append(
                    self._problem(
                        ProblemKind.EXCESSIVE_BRANCHING, entity, hop,
                        f"relation {relation} has {len(tails)} tails; kept top {limit}",
                    )
                )

            for t in chosen:
                checks = []
                for r in quals:
                    probe = SimulatedAnswer(r.text, sim.expected_types)
                    v, failed = self._match(adm, t, probe, r.text, f"r{r.index}", f"{self.g.entities[t].name}")
                    failed_backend |= failed
                    checks.append(QualifierCheck(r.index, v))
                    if not v.matched:
                        adm.problems.append(
                            self._problem(ProblemKind.QUALIFIER_FAILURE, t, hop, f"fails qualifier r{r.index} ({r.text!r})")
                        )
                adm.edges.append(_Edge(relation, t, verdict, tuple(checks)))
            adm.events.append(("expand", {**base, "tails": chosen, "truncated": len(chosen) < len(tails)}))

        if edges and not adm.admitted:
            adm.problems.append(
                self._problem(ProblemKind.UNMATCHED_PATH, entity, hop, f"no relation matched sub-question {key} ({instr.sub_question.text!r})")
            )
        if failed_backend:
            adm.problems.append(self._problem(ProblemKind.BACKEND_FAILURE, entity, hop, "matcher backend failed; affected branches pruned"))
        return adm


def kg_explore(
    g: KnowledgeGraph,
    plan: Plan,
    matcher: Matcher,
    cfg: ExploreConfig | None = None,
    *,
    seeds: Sequence[str] | None = None,
    tracer: Tracer | None = None,
    ledger: CostLedger | None = None,
) -> ExplorationResult:
    cfg = cfg or ExploreConfig()
    seeds = list(plan.seed_entities if seeds is None else seeds)
    for s in seeds:
        if s not in g:
            raise EntityNotFoundError(s)
    explorer = _Explorer(g, plan, matcher, cfg)
    forward = plan.forward_instructions()[: cfg.depth_cap]
    result = ExplorationResult()
    seen_problems: set[tuple] = set()

    # partial path: (seed, steps, entities on the path)
    frontier: list[tuple[str, tuple[PathStep, ...], frozenset[str]]] = [(s, (), frozenset([s])) for s in sorted(set(seeds))]

    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for hop, instr in enumerate(forward):
            if not frontier:
                break
            if tracer is not None:
                tracer.emit("instruction", {"hop": hop, "instruction": _instruction_payload(instr)})
            ends = sorted({steps[-1].triple.tail if steps else seed for seed, steps, _ in frontier})
            if pool is not None:
                admissions = list(pool.map(lambda e: explorer.admit(e, hop, instr), ends))
            else:
                admissions = [explorer.admit(e, hop, instr) for e in ends]
            by_entity = dict(zip(ends, admissions))

            for entity, adm in by_entity.items():
                result.expansion_count += 1
                result.prune_count += adm.pruned
                result.admitted_count += adm.admitted
                fresh = [p for p in adm.problems if p.sort_key not in seen_problems]
                seen_problems.update(p.sort_key for p in fresh)
                result.problems.extend(fresh)
                if ledger is not None:
                    ledger.record_matcher(adm.invocations)
                if tracer is not None:
                    for kind, payload in adm.events:
                        tracer.emit(kind, payload)
                    for p in fresh:
                        tracer.emit("problem", p.to_dict())

            nxt = []
            for seed, steps, on_path in frontier:
                end = steps[-1].triple.tail if steps else seed
                for edge in by_entity[end].edges:
                    if edge.tail in on_path:
                        continue
                    step = PathStep(Triple(end, edge.relation, edge.tail), edge.verdict, edge.checks)
                    nxt.append((seed, steps + (step,), on_path | {edge.tail}))
            frontier = nxt
    finally:
        if pool is not None:
            pool.shutdown()

    if forward:
        result.paths = sorted(
            (ReasoningPath(seed, steps) for seed, steps, _ in frontier if len(steps) == len(forward)),
            key=lambda p: (p.seed, p.key),
        )
    result.problems.sort(key=lambda p: p.sort_key)
    if tracer is not None:
        for p in result.paths:
            tracer.emit("path", p.to_dict())
    return result


def _instruction_payload(instr: Instruction) -> dict[str, Any]:
    sim = instr.simulated_answer
    return {
        "ordinal": instr.ordinal,
        "action": instr.action.value,
        "sub_question": instr.sub_question.index,
        "text": instr.sub_question.text,
        "simulated_answer": None if sim is None else {"text": sim.text, "expected_types": sorted(sim.expected_types)},
        "match_spec": instr.match_spec,
    }


def explore_seeds(
    g: KnowledgeGraph,
    plan: Plan,
    matcher: Matcher,
    cfg: ExploreConfig | None = None,
    *,
    tracer: Tracer | None = None,
    ledger: CostLedger | None = None,
) -> dict[str, ExplorationResult]:
    """One exploration per seed entity, in seed order."""
    return {s: kg_explore(g, plan, matcher, cfg, seeds=[s], tracer=tracer, ledger=ledger) for s in plan.seed_entities}


def all_paths(results: Iterable[ExplorationResult]) -> list[ReasoningPath]:
    return [p for r in results for p in r.paths]
