"""Answer aggregation, path verification and the plan/explore/reflect loop."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping

from kgpilot.explore import (
    ExplorationResult,
    ExploreConfig,
    ProblemKind,
    ProblemReport,
    ReasoningPath,
    explore_seeds,
)
from kgpilot.graph import KnowledgeGraph, digest, extract_subgraph
from kgpilot.llm import BackendError
from kgpilot.matching import Matcher, types_compatible
from kgpilot.metrics import (
    DEFAULT_MATCHER_PROFILE,
    DEFAULT_MATCHER_TOKENS_PER_CALL,
    DEFAULT_PLANNER_PROFILE,
    CostLedger,
    ModelProfile,
    flops_estimate,
)
from kgpilot.planning import (
    CluePrompt,
    EmptyPlanError,
    Plan,
    PlanError,
    PlannerBackend,
    build_plan,
    revise_plan,
)
from kgpilot.trace import Tracer

logger = logging.getLogger(__name__)


class Confidence(str, enum.Enum):
    HIGH = "HIGH"  # validated from every seed
    LOW = "LOW"  # no common entity across seeds; ranked union


@dataclass(frozen=True)
class AnswerSet:
    final_entities: tuple[str, ...]
    supporting_paths: Mapping[str, tuple[ReasoningPath, ...]]
    confidence: Confidence

    def to_dict(self, g: KnowledgeGraph | None = None) -> dict[str, Any]:
        return {
            "final_entities": list(self.final_entities),
            "labels": [g.entities[e].name for e in self.final_entities] if g is not None else None,
            "confidence": self.confidence.value,
            "supporting_paths": {
                eid: [p.render(g) for p in self.supporting_paths[eid]] for eid in self.final_entities
            },
        }


@dataclass
class IterationRecord:
    iteration: int
    plan: Plan
    results: dict[str, ExplorationResult]
    answer: AnswerSet | None = None
    clues: CluePrompt | None = None
    rendered: str = ""

    @property
    def result(self) -> ExplorationResult:
        merged = ExplorationResult()
        for r in self.results.values():
            merged = merged.merge(r)
        return merged

    def to_dict(self, g: KnowledgeGraph | None = None) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "plan": self.plan.to_dict(),
            "exploration": {seed: r.to_dict() for seed, r in self.results.items()},
            "answer": self.answer.to_dict(g) if self.answer is not None else None,
            "clues": self.clues.to_dict() if self.clues is not None else None,
            "rendered": self.rendered,
        }


@dataclass
class FailureReport:
    reason: str  # unanswerable | reflection_cap | backend_failure | plan_format
    message: str
    problems: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"reason": self.reason, "message": self.message, "problems": self.problems}


@dataclass(frozen=True)
class PipelineConfig:
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    max_reflections_single: int = 5
    max_reflections_multi: int = 10
    planner_profile: ModelProfile = DEFAULT_PLANNER_PROFILE
    matcher_profile: ModelProfile = DEFAULT_MATCHER_PROFILE
    matcher_tokens_per_call: int = DEFAULT_MATCHER_TOKENS_PER_CALL

    def __post_init__(self) -> None:
        if self.max_reflections_single < 0 or self.max_reflections_multi < 0:
            raise ValueError("reflection caps must be >= 0")

    def reflection_cap(self, hop_count: int) -> int:
        return self.max_reflections_single if hop_count <= 1 else self.max_reflections_multi


@dataclass
class PipelineResult:
    query: str
    ledger: CostLedger
    iterations: list[IterationRecord] = field(default_factory=list)
    answer: AnswerSet | None = None
    failure: FailureReport | None = None

    @property
    def answered(self) -> bool:
        return self.answer is not None

    @property
    def reflections(self) -> int:
        return max(0, len(self.iterations) - 1)

    @property
    def final_entities(self) -> list[str]:
        return list(self.answer.final_entities) if self.answer is not None else []

    def final_paths(self) -> list[ReasoningPath]:
        if not self.iterations:
            return []
        return [p for r in self.iterations[-1].results.values() for p in r.paths]

    def to_dict(self, g: KnowledgeGraph | None = None) -> dict[str, Any]:
        return {
            "question": self.query,
            "status": "answered" if self.answered else "failed",
            "answer": self.answer.to_dict(g) if self.answer is not None else None,
            "failure": self.failure.to_dict() if self.failure is not None else None,
            "reflections": self.reflections,
            "iterations": [r.to_dict(g) for r in self.iterations],
            "ledger": self.ledger.snapshot(),
        }

    def to_document(self, g: KnowledgeGraph | None = None) -> str:
        return json.dumps(self.to_dict(g), indent=2, ensure_ascii=False)


def terminal_satisfies(entity_id: str, plan: Plan, matcher: Matcher, g: KnowledgeGraph) -> bool:
    return types_compatible(matcher.type_of(g.entity(entity_id)), plan.final_types)


def verify_path(path: ReasoningPath, plan: Plan, matcher: Matcher, g: KnowledgeGraph) -> bool:
    """All recorded qualifier checks passed and the terminal meets the final type constraint."""
    for step in path.steps:
        if not all(c.verdict.matched for c in step.qualifier_checks):
            return False
    return terminal_satisfies(path.terminal, plan, matcher, g)


def validated_paths(
    results: Mapping[str, ExplorationResult], plan: Plan, matcher: Matcher, g: KnowledgeGraph
) -> dict[str, list[ReasoningPath]]:
    return {seed: [p for p in r.paths if verify_path(p, plan, matcher, g)] for seed, r in results.items()}


def _rank(entities: set[str], support: Mapping[str, list[ReasoningPath]]) -> tuple[str, ...]:
    best = {e: max(p.score for p in support[e]) for e in entities}
    return tuple(sorted(entities, key=lambda e: (-best[e], e)))


def aggregate(
    results: Mapping[str, ExplorationResult],
    plan: Plan,
    matcher: Matcher,
    g: KnowledgeGraph,
) -> AnswerSet | CluePrompt:
    missing = set(plan.seed_entities) - set(results)
    if missing:
        raise ValueError(f"no exploration result for seeds {sorted(missing)}")
    valid = validated_paths(results, plan, matcher, g)

    support: dict[str, list[ReasoningPath]] = {}
    for seed in plan.seed_entities:
        for p in valid[seed]:
            support.setdefault(p.terminal, []).append(p)

    if support:
        per_seed = [{p.terminal for p in valid[s]} for s in plan.seed_entities]
        common = set.intersection(*per_seed)
        if common:
            final, confidence = _rank(common, support), Confidence.HIGH
        else:
            final, confidence = _rank(set(support), support), Confidence.LOW
        return AnswerSet(final, {e: tuple(support[e]) for e in final}, confidence)

    problems: list[ProblemReport] = []
    for seed in plan.seed_entities:
        problems.extend(results[seed].problems)
        for p in results[seed].paths:
            if not terminal_satisfies(p.terminal, plan, matcher, g):
                problems.append(
                    ProblemReport(
                        ProblemKind.UNMATCHED_PATH, p.terminal, len(p.steps),
                        extract_subgraph(g, [p.terminal], 1),
                        f"path {p.render(g)} ends outside the expected types {sorted(plan.final_types)}",
                    )
                )
    seen = set()
    unique = []
    for p in sorted(problems, key=lambda p: p.sort_key):
        if p.sort_key not in seen:
            seen.add(p.sort_key)
            unique.append(p)
    if not unique:
        return CluePrompt(("exploration returned no paths and reported no problems",), ("",))
    return CluePrompt(tuple(p.summary() for p in unique), tuple(digest(p.subgraph) for p in unique))


def _validated_payload(valid: Mapping[str, list[ReasoningPath]]) -> dict[str, list[dict[str, Any]]]:
    return {
        seed: [{"terminal": p.terminal, "score": p.score, "triples": [s.triple.as_list() for s in p.steps]} for p in paths]
        for seed, paths in valid.items()
    }


def run_pipeline(
    query: str,
    g: KnowledgeGraph,
    planner: PlannerBackend,
    matcher: Matcher,
    cfg: PipelineConfig | None = None,
    *,
    tracer: Tracer | None = None,
    ledger: CostLedger | None = None,
) -> PipelineResult:
    cfg = cfg or PipelineConfig()
    ledger = ledger or CostLedger()
    if tracer is not None and tracer.ledger is None:
        tracer.ledger = ledger
    out = PipelineResult(query, ledger)

    def finish() -> PipelineResult:
        ledger.set_flops(flops_estimate(ledger, cfg.planner_profile, cfg.matcher_profile, cfg.matcher_tokens_per_call))
        if tracer is not None:
            if out.answer is not None:
                payload = {"status": "answered", "final_entities": list(out.answer.final_entities), "confidence": out.answer.confidence.value}
            else:
                assert out.failure is not None
                payload = {"status": "failed", "reason": out.failure.reason, "final_entities": []}
            tracer.emit("answer", payload)
        return out

    try:
        plan = build_plan(query, planner, g, ledger=ledger)
    except EmptyPlanError as exc:
        out.failure = FailureReport("unanswerable", str(exc))
        return finish()
    except PlanError as exc:
        out.failure = FailureReport("plan_format", str(exc))
        return finish()
    except BackendError as exc:
        out.failure = FailureReport("backend_failure", str(exc), [{"kind": ProblemKind.BACKEND_FAILURE.value, "note": str(exc)}])
        return finish()

    cap = cfg.reflection_cap(plan.hop_count)
    while True:
        if tracer is not None:
            tracer.iteration = plan.iteration
            tracer.emit("plan", plan.to_dict())
        results = explore_seeds(g, plan, matcher, cfg.explore, tracer=tracer, ledger=ledger)
        outcome = aggregate(results, plan, matcher, g)
        valid = validated_paths(results, plan, matcher, g)
        record = IterationRecord(plan.iteration, plan, results)
        out.iterations.append(record)

        try:
            reply = planner.summarize(query, [p.render(g) for paths in valid.values() for p in paths])
        except BackendError as exc:
            ledger.record_llm_call()
            out.failure = FailureReport("backend_failure", str(exc), [{"kind": ProblemKind.BACKEND_FAILURE.value, "note": str(exc)}])
            return finish()
        ledger.record_llm_call(reply.prompt_tokens, reply.completion_tokens)
        record.rendered = reply.text
        if tracer is not None:
            tracer.emit(
                "aggregate",
                {"validated": _validated_payload(valid), "outcome": "answer" if isinstance(outcome, AnswerSet) else "clues"},
            )

        if isinstance(outcome, AnswerSet):
            record.answer = outcome
            out.answer = outcome
            return finish()

        record.clues = outcome
        if plan.iteration >= cap:
            problems = [p.to_dict() for r in results.values() for p in r.problems]
            out.failure = FailureReport(
                "reflection_cap",
                f"no validated answer after {plan.iteration} reflection(s) (cap {cap})",
                problems,
            )
            return finish()

        if tracer is not None:
            tracer.emit("reflect", {"from_iteration": plan.iteration, "clues": outcome.to_dict()})
        try:
            plan = revise_plan(plan, outcome, planner, g, ledger=ledger, max_iterations=cap)
        except EmptyPlanError as exc:
            out.failure = FailureReport("unanswerable", f"revised plan has no resolvable seed: {exc}")
            return finish()
        except PlanError as exc:
            out.failure = FailureReport("plan_format", str(exc))
            return finish()
        except BackendError as exc:
            out.failure = FailureReport("backend_failure", str(exc), [{"kind": ProblemKind.BACKEND_FAILURE.value, "note": str(exc)}])
            return finish()

