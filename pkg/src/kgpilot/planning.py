"""Global plans: seed entities, sub-questions, qualifiers, simulated answers, instructions.

A planner backend produces a :class:`PlanDraft` in a single round-trip; the
functions below validate it stage by stage and assemble a :class:`Plan`.
"""

from __future__ import annotations

import copy
import enum
import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Mapping, Sequence

from kgpilot.graph import KnowledgeGraph
from kgpilot.llm import BackendError, ChatClient, extract_json
from kgpilot.matching import TypeTaxonomy, default_taxonomy
from kgpilot.metrics import CostLedger, estimate_tokens

logger = logging.getLogger(__name__)


class PlanError(Exception):
    pass


class EmptyPlanError(PlanError):
    """No seed entity could be resolved; the question is unanswerable."""


class PlanFormatError(PlanError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class SubQuestion:
    index: int
    text: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("sub-question index is 1-based")
        if not self.text.strip():
            raise ValueError("sub-question text must be non-empty")


@dataclass(frozen=True)
class Qualifier:
    index: int
    text: str
    attaches_to: int


@dataclass(frozen=True)
class SimulatedAnswer:
    text: str
    expected_types: frozenset[str]

    def __post_init__(self) -> None:
        if not isinstance(self.expected_types, frozenset):
            object.__setattr__(self, "expected_types", frozenset(self.expected_types))
        if not self.expected_types:
            raise ValueError("a simulated answer must constrain at least one type")


class Action(str, enum.Enum):
    FORWARD_SEARCH = "FORWARD_SEARCH"
    ADVERBIAL_QUALIFIER = "ADVERBIAL_QUALIFIER"


@dataclass(frozen=True)
class Instruction:
    ordinal: int
    action: Action
    sub_question: SubQuestion
    simulated_answer: SimulatedAnswer | None = None
    qualifier: Qualifier | None = None
    match_spec: str = ""

    def __post_init__(self) -> None:
        if self.action is Action.FORWARD_SEARCH:
            if self.simulated_answer is None or self.qualifier is not None:
                raise ValueError("FORWARD_SEARCH needs a simulated answer and no qualifier")
        elif self.action is Action.ADVERBIAL_QUALIFIER:
            if self.qualifier is None or self.simulated_answer is not None:
                raise ValueError("ADVERBIAL_QUALIFIER needs a qualifier and no simulated answer")
            if self.qualifier.attaches_to != self.sub_question.index:
                raise ValueError("qualifier instruction must reference the sub-question it constrains")


@dataclass(frozen=True)
class CluePrompt:
    problem_summaries: tuple[str, ...]
    subgraph_digests: tuple[str, ...]

    def __bool__(self) -> bool:
        return bool(self.problem_summaries or self.subgraph_digests)

    def render(self) -> str:
        lines = []
        for i, summary in enumerate(self.problem_summaries, 1):
            lines.append(f"{i}. {summary}")
            if i - 1 < len(self.subgraph_digests):
                lines.append(f"   subgraph: {self.subgraph_digests[i - 1]}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"problem_summaries": list(self.problem_summaries), "subgraph_digests": list(self.subgraph_digests)}


@dataclass(frozen=True)
class Plan:
    query: str
    seed_entities: tuple[str, ...]
    sub_questions: tuple[SubQuestion, ...]
    qualifiers: tuple[Qualifier, ...]
    simulated_answers: tuple[SimulatedAnswer, ...]
    instructions: tuple[Instruction, ...]
    final_constraint: str
    iteration: int = 0

    def __post_init__(self) -> None:
        if not self.seed_entities:
            raise ValueError("plan needs at least one seed entity")
        if self.iteration < 0:
            raise ValueError("iteration must be >= 0")
        if len(self.simulated_answers) != len(self.sub_questions):
            raise ValueError("one simulated answer per sub-question")
        _check_decomposition(self.sub_questions, self.qualifiers, PlanFormatError)
        indices = {q.index for q in self.sub_questions}
        forward = [i.sub_question.index for i in self.instructions if i.action is Action.FORWARD_SEARCH]
        if sorted(forward) != sorted(indices) or len(set(forward)) != len(forward):
            raise ValueError("each sub-question needs exactly one FORWARD_SEARCH instruction")

    @property
    def hop_count(self) -> int:
        return len(self.sub_questions)

    def forward_instructions(self) -> list[Instruction]:
        return sorted(
            (i for i in self.instructions if i.action is Action.FORWARD_SEARCH),
            key=lambda i: i.ordinal,
        )

    def qualifiers_for(self, sub_question_index: int) -> list[Qualifier]:
        return [q for q in self.qualifiers if q.attaches_to == sub_question_index]

    def answer_for(self, sub_question_index: int) -> SimulatedAnswer:
        pos = [q.index for q in self.sub_questions].index(sub_question_index)
        return self.simulated_answers[pos]

    @property
    def final_types(self) -> frozenset[str]:
        return self.simulated_answers[-1].expected_types

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "iteration": self.iteration,
            "seed_entities": list(self.seed_entities),
            "sub_questions": [{"index": q.index, "text": q.text} for q in self.sub_questions],
            "qualifiers": [{"index": r.index, "text": r.text, "attaches_to": r.attaches_to} for r in self.qualifiers],
            "simulated_answers": [
                {"sub_question": q.index, "text": a.text, "expected_types": sorted(a.expected_types)}
                for q, a in zip(self.sub_questions, self.simulated_answers)
            ],
            "instructions": [_instruction_dict(i) for i in self.instructions],
            "final_constraint": self.final_constraint,
        }

    def to_document(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Plan":
        subqs = tuple(SubQuestion(int(q["index"]), q["text"]) for q in d["sub_questions"])
        quals = tuple(Qualifier(int(r["index"]), r["text"], int(r["attaches_to"])) for r in d["qualifiers"])
        answers = {int(a["sub_question"]): SimulatedAnswer(a["text"], frozenset(a["expected_types"])) for a in d["simulated_answers"]}
        by_q = {q.index: q for q in subqs}
        by_r = {r.index: r for r in quals}
        instructions = []
        for raw in d["instructions"]:
            action = Action(raw["action"])
            q = by_q[int(raw["sub_question"])]
            instructions.append(
                Instruction(
                    ordinal=int(raw["ordinal"]),
                    action=action,
                    sub_question=q,
                    simulated_answer=answers[q.index] if action is Action.FORWARD_SEARCH else None,
                    qualifier=by_r[int(raw["qualifier"])] if action is Action.ADVERBIAL_QUALIFIER else None,
                    match_spec=raw.get("match_spec", ""),
                )
            )
        return cls(
            query=d["query"],
            seed_entities=tuple(d["seed_entities"]),
            sub_questions=subqs,
            qualifiers=quals,
            simulated_answers=tuple(answers[q.index] for q in subqs),
            instructions=tuple(instructions),
            final_constraint=d["final_constraint"],
            iteration=int(d["iteration"]),
        )

    @classmethod
    def from_document(cls, text: str) -> "Plan":
        return cls.from_dict(json.loads(text))


def _instruction_dict(i: Instruction) -> dict[str, Any]:
    d: dict[str, Any] = {"ordinal": i.ordinal, "action": i.action.value, "sub_question": i.sub_question.index}
    if i.qualifier is not None:
        d["qualifier"] = i.qualifier.index
    d["match_spec"] = i.match_spec
    return d


def _check_decomposition(subqs: Sequence[SubQuestion], quals: Sequence[Qualifier], exc: type[Exception]) -> None:
    if not subqs:
        raise exc("at least one sub-question is required")
    indices = [q.index for q in subqs]
    if len(set(indices)) != len(indices):
        raise exc(f"duplicate sub-question indices: {indices}")
    if len(quals) > len(subqs):
        raise exc(f"{len(quals)} qualifiers for {len(subqs)} sub-questions")
    if len({r.index for r in quals}) != len(quals):
        raise exc("duplicate qualifier indices")
    for r in quals:
        if r.attaches_to not in indices:
            raise exc(f"qualifier {r.index} attaches to unknown sub-question {r.attaches_to}")


# ---------------------------------------------------------------------------
# Drafts and backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanDraft:
    """Raw planner output, before validation."""

    seeds: tuple[str, ...] = ()
    sub_questions: tuple[str, ...] = ()
    qualifiers: tuple[tuple[str, int], ...] = ()
    answers: tuple[tuple[str, tuple[str, ...]], ...] = ()
    match_specs: tuple[str, ...] = ()
    final_constraint: str = ""
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], prompt_tokens: int = 0, completion_tokens: int = 0) -> "PlanDraft":
        if not isinstance(d, Mapping):
            raise PlanFormatError("plan document must be an object")
        try:
            quals = tuple((str(r["text"]), int(r["attaches_to"])) for r in d.get("qualifiers", []))
            answers = tuple(
                (str(a.get("text", "")), tuple(str(t) for t in a.get("types", []))) for a in d.get("answers", [])
            )
            return cls(
                seeds=tuple(str(s) for s in d.get("seeds", [])),
                sub_questions=tuple(str(q) for q in d.get("sub_questions", [])),
                qualifiers=quals,
                answers=answers,
                match_specs=tuple(str(s) for s in d.get("match_specs", [])),
                final_constraint=str(d.get("final_constraint", "")),
                prompt_tokens=prompt_tokens,
                completion_tokens=completion_tokens,
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise PlanFormatError(f"malformed plan document: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "seeds": list(self.seeds),
            "sub_questions": list(self.sub_questions),
            "qualifiers": [{"text": t, "attaches_to": a} for t, a in self.qualifiers],
            "answers": [{"text": t, "types": list(ts)} for t, ts in self.answers],
            "match_specs": list(self.match_specs),
            "final_constraint": self.final_constraint,
        }


@dataclass(frozen=True)
class Reply:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


def load_prompt(name: str) -> Template:
    return Template(resources.files("kgpilot").joinpath(f"assets/prompts/{name}.txt").read_text(encoding="utf-8"))


def render_paths_text(paths_text: Sequence[str]) -> str:
    return "\n".join(paths_text) if paths_text else "(none)"


class PlannerBackend(ABC):
    """One method per backend round-trip."""

    def __init__(self, taxonomy: TypeTaxonomy | None = None):
        self.taxonomy = taxonomy or default_taxonomy()

    def plan_prompt(self, query: str) -> str:
        return load_prompt("plan").substitute(query=query, taxonomy="\n".join(self.taxonomy.labels))

    def revise_prompt(self, query: str, prev: Plan, clues: CluePrompt) -> str:
        return load_prompt("revise").substitute(
            query=query, plan=prev.to_document(), clues=clues.render(), taxonomy="\n".join(self.taxonomy.labels)
        )

    def aggregate_prompt(self, query: str, paths_text: Sequence[str]) -> str:
        return load_prompt("aggregate").substitute(query=query, paths=render_paths_text(paths_text))

    @abstractmethod
    def draft(self, query: str) -> PlanDraft: ...

    @abstractmethod
    def redraft(self, query: str, prev: Plan, clues: CluePrompt) -> PlanDraft: ...

    @abstractmethod
    def summarize(self, query: str, paths_text: Sequence[str]) -> Reply: ...


def _merge(base: dict[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(base)
    for k, v in override.items():
        merged[k] = copy.deepcopy(v)
    return merged


class ScriptedPlanner(PlannerBackend):
    """Canned plans keyed by exact question text.

    Fixture (JSON)::

        {"queries": {"<question>": {<plan fields>, "revisions": [{<overrides>}, ...]}}}

    Revision ``k`` (0-based) produces plan iteration ``k + 1``; each is
    merged over the original entry. Past the end of the list the last
    revision repeats. Token counts are estimated as if the call were remote.
    """

    def __init__(self, fixture: Mapping[str, Any], taxonomy: TypeTaxonomy | None = None):
        super().__init__(taxonomy)
        self._queries: dict[str, dict[str, Any]] = {k.strip(): dict(v) for k, v in fixture.get("queries", {}).items()}

    @classmethod
    def from_file(cls, path: str | Path, taxonomy: TypeTaxonomy | None = None) -> "ScriptedPlanner":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), taxonomy)

    def _entry(self, query: str) -> dict[str, Any] | None:
        return self._queries.get(query.strip())

    def _as_draft(self, doc: Mapping[str, Any], prompt: str) -> PlanDraft:
        body = {k: v for k, v in doc.items() if k != "revisions"}
        completion = json.dumps(body, sort_keys=True)
        return PlanDraft.from_dict(body, estimate_tokens(prompt), estimate_tokens(completion))

    def draft(self, query):
        prompt = self.plan_prompt(query)
        entry = self._entry(query)
        if entry is None:
            return PlanDraft(prompt_tokens=estimate_tokens(prompt))
        return self._as_draft(entry, prompt)

    def redraft(self, query, prev, clues):
        prompt = self.revise_prompt(query, prev, clues)
        entry = self._entry(query)
        if entry is None:
            return PlanDraft(prompt_tokens=estimate_tokens(prompt))
        revisions = entry.get("revisions") or [{}]
        override = revisions[min(prev.iteration, len(revisions) - 1)]
        return self._as_draft(_merge(entry, override), prompt)

    def summarize(self, query, paths_text):
        prompt = self.aggregate_prompt(query, paths_text)
        text = render_paths_text(paths_text)
        return Reply(text, estimate_tokens(prompt), estimate_tokens(text))


class RemotePlanner(PlannerBackend):
    def __init__(self, client: ChatClient, taxonomy: TypeTaxonomy | None = None):
        super().__init__(taxonomy)
        self.client = client

    def _call(self, prompt: str) -> PlanDraft:
        reply = self.client.complete([{"role": "user", "content": prompt}])
        try:
            doc = extract_json(reply.text)
        except ValueError as exc:
            raise PlanFormatError(f"planner reply is not JSON: {exc}") from exc
        return PlanDraft.from_dict(doc, reply.prompt_tokens, reply.completion_tokens)

    def draft(self, query):
        return self._call(self.plan_prompt(query))

    def redraft(self, query, prev, clues):
        return self._call(self.revise_prompt(query, prev, clues))

    def summarize(self, query, paths_text):
        reply = self.client.complete([{"role": "user", "content": self.aggregate_prompt(query, paths_text)}])
        return Reply(reply.text, reply.prompt_tokens, reply.completion_tokens)


# ---------------------------------------------------------------------------
# Planning stages
# ---------------------------------------------------------------------------


def extract_entity(draft: PlanDraft, g: KnowledgeGraph) -> list[str]:
    """Resolve the draft's seed mentions to graph entity ids (order kept, duplicates dropped)."""
    seeds: list[str] = []
    for mention in draft.seeds:
        eid = g.resolve(mention)
        if eid is None:
            logger.info("seed mention %r does not resolve in the graph", mention)
        elif eid not in seeds:
            seeds.append(eid)
    if not seeds:
        raise EmptyPlanError(f"no resolvable seed entity among {list(draft.seeds)}")
    return seeds


def decompose(draft: PlanDraft, seeds: Sequence[str]) -> tuple[list[SubQuestion], list[Qualifier]]:
    if not seeds:
        raise PreconditionError("decompose needs at least one seed")
    try:
        subqs = [SubQuestion(i, text) for i, text in enumerate(draft.sub_questions, 1)]
        quals = [Qualifier(i, text, attaches_to) for i, (text, attaches_to) in enumerate(draft.qualifiers, 1)]
    except ValueError as exc:
        raise PlanFormatError(str(exc)) from exc
    _check_decomposition(subqs, quals, PlanFormatError)
    return subqs, quals


def simulate_answers(
    draft: PlanDraft,
    subqs: Sequence[SubQuestion],
    quals: Sequence[Qualifier],
    taxonomy: TypeTaxonomy | None = None,
) -> list[SimulatedAnswer]:
    if not subqs:
        raise PreconditionError("simulate_answers needs at least one sub-question")
    taxonomy = taxonomy or default_taxonomy()
    if len(draft.answers) != len(subqs):
        raise PlanFormatError(f"{len(draft.answers)} simulated answers for {len(subqs)} sub-questions")
    answers = []
    for q, (text, raw_types) in zip(subqs, draft.answers):
        types = {taxonomy.normalize(t) for t in raw_types} - {None}
        if not types:
            raise PlanFormatError(f"simulated answer for sub-question {q.index} has no usable type: {list(raw_types)}")
        answers.append(SimulatedAnswer(text, frozenset(types)))  # type: ignore[arg-type]
    return answers


def generate_instructions(
    seeds: Sequence[str],
    subqs: Sequence[SubQuestion],
    quals: Sequence[Qualifier],
    answers: Sequence[SimulatedAnswer],
    *,
    query: str = "",
    match_specs: Sequence[str] = (),
    final_constraint: str = "",
    iteration: int = 0,
) -> Plan:
    if len(answers) != len(subqs):
        raise PreconditionError("answers must be indexed by sub-question")
    instructions: list[Instruction] = []
    for pos, (q, a) in enumerate(zip(subqs, answers)):
        spec = match_specs[pos] if pos < len(match_specs) else ""
        instructions.append(Instruction(len(instructions) + 1, Action.FORWARD_SEARCH, q, simulated_answer=a, match_spec=spec))
        for r in quals:
            if r.attaches_to == q.index:
                instructions.append(Instruction(len(instructions) + 1, Action.ADVERBIAL_QUALIFIER, q, qualifier=r, match_spec=r.text))
    if not final_constraint:
        final_constraint = "answer entity is typed as one of: " + ", ".join(sorted(answers[-1].expected_types))
    return Plan(
        query=query,
        seed_entities=tuple(seeds),
        sub_questions=tuple(subqs),
        qualifiers=tuple(quals),
        simulated_answers=tuple(answers),
        instructions=tuple(instructions),
        final_constraint=final_constraint,
        iteration=iteration,
    )


def plan_from_draft(draft: PlanDraft, query: str, g: KnowledgeGraph, taxonomy: TypeTaxonomy | None = None, iteration: int = 0) -> Plan:
    seeds = extract_entity(draft, g)
    subqs, quals = decompose(draft, seeds)
    answers = simulate_answers(draft, subqs, quals, taxonomy)
    return generate_instructions(
        seeds, subqs, quals, answers,
        query=query, match_specs=draft.match_specs, final_constraint=draft.final_constraint, iteration=iteration,
    )


def _record(ledger: CostLedger | None, draft: PlanDraft) -> None:
    if ledger is not None:
        ledger.record_llm_call(draft.prompt_tokens, draft.completion_tokens)


def build_plan(query: str, planner: PlannerBackend, g: KnowledgeGraph, *, ledger: CostLedger | None = None) -> Plan:
    """Global planning in one backend round-trip."""
    if not query.strip():
        raise PreconditionError("query must be non-empty")
    try:
        draft = planner.draft(query)
    except BackendError:
        if ledger is not None:
            ledger.record_llm_call()
        raise
    _record(ledger, draft)
    return plan_from_draft(draft, query, g, planner.taxonomy)


def revise_plan(
    prev: Plan,
    clues: CluePrompt,
    planner: PlannerBackend,
    g: KnowledgeGraph,
    *,
    ledger: CostLedger | None = None,
    max_iterations: int | None = None,
) -> Plan:
    """New plan at ``prev.iteration + 1``; ``prev`` is left untouched."""
    if not clues:
        raise PreconditionError("revise_plan needs a non-empty clue prompt")
    if max_iterations is not None and prev.iteration >= max_iterations:
        raise PreconditionError(f"iteration cap {max_iterations} reached")
    try:
        draft = planner.redraft(prev.query, prev, clues)
    except BackendError:
        if ledger is not None:
            ledger.record_llm_call()
        raise
    _record(ledger, draft)
    return plan_from_draft(draft, prev.query, g, planner.taxonomy, iteration=prev.iteration + 1)
