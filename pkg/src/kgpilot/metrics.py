"""Cost accounting and evaluation metrics.

FLOPs are an *estimate*: 2 x parameters per processed token, with parameter
counts taken from declared model profiles rather than measured hardware.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from typing import Callable, Collection, Iterable, Sequence

from kgpilot.graph import Entity, EntityNotFoundError, KnowledgeGraph, Triple

Path = tuple[Triple, ...]

ORACLE_MAX_TRIPLES = 10_000
ORACLE_MAX_DEPTH = 4

_TOKEN = re.compile(r"\w+|[^\w\s]")


class UndefinedMetricError(ValueError):
    pass


class OracleLimitError(ValueError):
    pass


def estimate_tokens(text: str) -> int:
    """Rough token count used when a backend does not report usage."""
    return len(_TOKEN.findall(text))


class CostLedger:
    """Thread-safe running totals for one question."""

    _FIELDS = ("llm_calls", "prompt_tokens", "completion_tokens", "matcher_invocations")

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.llm_calls = 0
        self.prompt_tokens = 0
        self.completion_tokens = 0
        self.matcher_invocations = 0
        self.flops_estimate = 0.0

    def record_llm_call(self, prompt_tokens: int = 0, completion_tokens: int = 0) -> None:
        if prompt_tokens < 0 or completion_tokens < 0:
            raise ValueError("token counts must be >= 0")
        with self._lock:
            self.llm_calls += 1
            self.prompt_tokens += prompt_tokens
            self.completion_tokens += completion_tokens

    def record_matcher(self, n: int = 1) -> None:
        if n < 0:
            raise ValueError("n must be >= 0")
        with self._lock:
            self.matcher_invocations += n

    def set_flops(self, value: float) -> None:
        with self._lock:
            if value < self.flops_estimate:
                raise ValueError("flops estimate must not decrease")
            self.flops_estimate = value

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def snapshot(self) -> dict[str, float | int]:
        with self._lock:
            snap: dict[str, float | int] = {f: getattr(self, f) for f in self._FIELDS}
            snap["flops_estimate"] = self.flops_estimate
            return snap

    def __repr__(self) -> str:
        return f"CostLedger({self.snapshot()})"


@dataclass(frozen=True)
class ModelProfile:
    """Declared parameter count for a model. Values are estimates, not facts."""

    name: str
    params: float

    def __post_init__(self) -> None:
        if self.params <= 0:
            raise ValueError("params must be > 0")

    @property
    def flops_per_token(self) -> float:
        return 2.0 * self.params


# parameter counts are public estimates; GPT-4's is undisclosed
DEFAULT_PLANNER_PROFILE = ModelProfile("gpt-4 (estimated)", 1.8e12)
DEFAULT_MATCHER_PROFILE = ModelProfile("roberta-large", 3.55e8)
DEFAULT_MATCHER_TOKENS_PER_CALL = 64


def flops_estimate(
    ledger: CostLedger,
    planner_profile: ModelProfile = DEFAULT_PLANNER_PROFILE,
    matcher_profile: ModelProfile = DEFAULT_MATCHER_PROFILE,
    matcher_tokens_per_call: int = DEFAULT_MATCHER_TOKENS_PER_CALL,
) -> float:
    snap = ledger.snapshot()
    planner = (snap["prompt_tokens"] + snap["completion_tokens"]) * planner_profile.flops_per_token
    matcher = snap["matcher_invocations"] * matcher_tokens_per_call * matcher_profile.flops_per_token
    return float(planner + matcher)


def path_key(path: Iterable[Triple] | object) -> Path:
    """Identity of a path: its exact triple sequence."""
    steps = getattr(path, "steps", None)
    if steps is not None:
        return tuple(s.triple for s in steps)
    return tuple(t if isinstance(t, Triple) else Triple(*t) for t in path)  # type: ignore[union-attr]


def pruning_recall(returned: Iterable, gold: Iterable) -> float:
    gold_keys = {path_key(p) for p in gold}
    if not gold_keys:
        raise UndefinedMetricError("pruning recall is undefined for an empty gold set")
    returned_keys = {path_key(p) for p in returned}
    return len(gold_keys & returned_keys) / len(gold_keys)


def cost_efficiency(recall: float, flops: float) -> float:
    if not 0.0 <= recall <= 1.0:
        raise ValueError(f"recall must be in [0, 1], got {recall}")
    if flops <= 0:
        raise UndefinedMetricError("cost efficiency is undefined for flops <= 0")
    return recall / flops


def hits_at_1(answers: Sequence[str], gold_answers: Collection[str]) -> int:
    return int(bool(answers) and answers[0] in gold_answers)


def brute_force_paths(
    g: KnowledgeGraph,
    seeds: Iterable[str],
    depth: int,
    terminal_predicate: Callable[[Entity], bool] | None = None,
    *,
    max_triples: int = ORACLE_MAX_TRIPLES,
) -> list[Path]:
    """Every simple outgoing path of exactly ``depth`` hops from any seed.

    Exhaustive and deliberately naive; refuses graphs above ``max_triples``.
    """
    if len(g.triples) > max_triples:
        raise OracleLimitError(f"graph has {len(g.triples)} triples, oracle bound is {max_triples}")
    if not 1 <= depth <= ORACLE_MAX_DEPTH:
        raise OracleLimitError(f"oracle depth must be in [1, {ORACLE_MAX_DEPTH}], got {depth}")
    seeds = sorted(set(seeds))
    for s in seeds:
        if s not in g:
            raise EntityNotFoundError(s)

    out: list[Path] = []

    def walk(node: str, visited: frozenset[str], prefix: Path) -> None:
        if len(prefix) == depth:
            if terminal_predicate is None or terminal_predicate(g.entities[node]):
                out.append(prefix)
            return
        for relation, tails in g.neighbors(node, "outgoing").items():
            for tail in tails:
                if tail not in visited:
                    walk(tail, visited | {tail}, prefix + (Triple(node, relation, tail),))

    for s in seeds:
        walk(s, frozenset([s]), ())
    return sorted(out)


def type_filter(prefix: str) -> Callable[[Entity], bool]:
    """Predicate: entity carries ``prefix`` or a descendant label."""
    prefix = prefix.strip("/")

    def pred(e: Entity) -> bool:
        return any(t == prefix or t.startswith(prefix + "/") for t in e.fine_types)

    return pred
