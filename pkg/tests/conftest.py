from __future__ import annotations

import json
import random
import sys
from dataclasses import dataclass
from pathlib import Path

import httpx
import pytest

from kgpilot.graph import Entity, KnowledgeGraph, Triple, load_graph
from kgpilot.llm import ChatClient, ChatConfig
from kgpilot.matching import Matcher, TableMatcher
from kgpilot.planning import (
    Action,
    Instruction,
    Plan,
    Qualifier,
    ScriptedPlanner,
    SimulatedAnswer,
    SubQuestion,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@dataclass
class Suite:
    root: Path
    graph: KnowledgeGraph
    planner: ScriptedPlanner
    matcher_path: Path | None

    def table(self) -> TableMatcher:
        assert self.matcher_path is not None
        return TableMatcher.from_file(self.matcher_path)

    @property
    def dataset(self) -> Path:
        return self.root / "dataset.jsonl"

    def cli_args(self) -> list[str]:
        matcher = f"table:{self.matcher_path}" if self.matcher_path else "lexical"
        return [
            "--graph", str(self.root / "graph.tsv"),
            "--meta", str(self.root / "meta.tsv"),
            "--planner", f"scripted:{self.root / 'planner.json'}",
            "--matcher", matcher,
        ]


def load_suite(name: str) -> Suite:
    root = FIXTURES / name
    m = root / "matcher.json"
    return Suite(
        root,
        load_graph(root / "graph.tsv", root / "meta.tsv"),
        ScriptedPlanner.from_file(root / "planner.json"),
        m if m.exists() else None,
    )


@pytest.fixture
def suite():
    return load_suite


def make_graph(triples, types=None, labels=None) -> KnowledgeGraph:
    types = types or {}
    labels = labels or {}
    ids = sorted({x for h, _, t in triples for x in (h, t)} | set(types) | set(labels))
    ents = [Entity(i, labels.get(i, i), "", frozenset(types.get(i, ()))) for i in ids]
    return KnowledgeGraph(ents, [Triple(*t) for t in triples])


def random_graph(rng: random.Random, n_entities: int, n_triples: int, n_relations: int = 4) -> KnowledgeGraph:
    ids = [f"e{i:04d}" for i in range(n_entities)]
    rels = [f"r{i}" for i in range(n_relations)]
    triples = set()
    while len(triples) < n_triples:
        h, t = rng.choice(ids), rng.choice(ids)
        triples.add((h, rng.choice(rels), t))
    return make_graph(sorted(triples), labels={i: i for i in ids})


def hop_plan(seeds, depth, types=("other",), qualifiers=(), query="synthetic") -> Plan:
    """Hand-built plan of ``depth`` forward hops with no backend involved."""
    subqs = [SubQuestion(i, f"hop {i}") for i in range(1, depth + 1)]
    answers = [SimulatedAnswer(f"answer {i}", frozenset(types)) for i in range(1, depth + 1)]
    quals = [Qualifier(i, text, at) for i, (text, at) in enumerate(qualifiers, 1)]
    instructions = []
    for q, a in zip(subqs, answers):
        instructions.append(Instruction(len(instructions) + 1, Action.FORWARD_SEARCH, q, simulated_answer=a))
        for r in quals:
            if r.attaches_to == q.index:
                instructions.append(Instruction(len(instructions) + 1, Action.ADVERBIAL_QUALIFIER, q, qualifier=r))
    return Plan(query, tuple(seeds), tuple(subqs), tuple(quals), tuple(answers), tuple(instructions), "any", 0)


class CountingMatcher(Matcher):
    """Wraps a matcher and records every (entity, key) it is asked about."""

    def __init__(self, inner: Matcher):
        self.inner = inner
        self.calls: list[tuple[str, str]] = []

    def type_of(self, entity):
        return self.inner.type_of(entity)

    def match(self, candidate, sim, spec="", *, key=None, context=""):
        self.calls.append((candidate.id, str(key)))
        return self.inner.match(candidate, sim, spec, key=key, context=context)


def chat_transport(replies, seen=None):
    """MockTransport serving canned chat-completions replies in order.

    Each reply is either a string (HTTP 200 with that content) or an int
    status code. Request bodies are appended to ``seen`` when given.
    """
    queue = list(replies)

    def handler(request: httpx.Request) -> httpx.Response:
        if seen is not None:
            seen.append(json.loads(request.content))
        item = queue.pop(0)
        if isinstance(item, int):
            return httpx.Response(item, text="unavailable")
        body = {"choices": [{"message": {"role": "assistant", "content": item}}], "usage": {"prompt_tokens": 11, "completion_tokens": 7}}
        return httpx.Response(200, json=body)

    return httpx.MockTransport(handler)


def chat_client(replies, seen=None, retries=2):
    return ChatClient(
        ChatConfig(base_url="http://llm.test/v1", api_key="k", model="m", max_retries=retries, backoff=0.01),
        transport=chat_transport(replies, seen),
        sleep=lambda s: None,
    )


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
