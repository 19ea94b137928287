"""Command-line entry points: ``run``, ``eval`` and ``oracle``.

Examples::

    kgpilot run --graph g.tsv --meta meta.tsv --planner scripted:plans.json \\
        --matcher table:verdicts.json --trace run.jsonl "Where did ... go to college?"
    kgpilot eval --graph g.tsv --meta meta.tsv --planner scripted:plans.json \\
        --matcher lexical dataset.jsonl
    kgpilot oracle --graph g.tsv --seeds A,B --depth 2 --type-filter person
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Sequence

from kgpilot.explore import ExploreConfig
from kgpilot.graph import GraphError, KnowledgeGraph, Triple, load_graph
from kgpilot.llm import ChatClient, ChatConfig
from kgpilot.matching import (
    DEFAULT_TAU,
    DEFAULT_TAU_COARSE,
    LexicalMatcher,
    Matcher,
    NoisyMatcher,
    RemoteMatcher,
    TableMatcher,
)
from kgpilot.metrics import (
    OracleLimitError,
    UndefinedMetricError,
    brute_force_paths,
    cost_efficiency,
    hits_at_1,
    pruning_recall,
    type_filter,
)
from kgpilot.planning import PlannerBackend, RemotePlanner, ScriptedPlanner
from kgpilot.reflect import PipelineConfig, PipelineResult, run_pipeline
from kgpilot.trace import Tracer

logger = logging.getLogger("kgpilot")

EXIT_OK = 0
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    graph: str
    meta: str | None = None
    planner: str = "remote"
    matcher: str = "lexical"
    depth_cap: int = 3
    branch_threshold: int | None = 8
    tau: float = DEFAULT_TAU
    tau_coarse: float = DEFAULT_TAU_COARSE
    max_reflections_single: int = 5
    max_reflections_multi: int = 10
    include_incoming: bool = False
    false_negative_rate: float = 0.0
    seed: int = 0
    trace: str | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.max_reflections_single < 0 or self.max_reflections_multi < 0:
            raise ConfigError("reflection caps must be >= 0")
        if self.depth_cap < 1:
            raise ConfigError("depth cap must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            explore=ExploreConfig(
                depth_cap=self.depth_cap,
                branch_threshold=self.branch_threshold,
                include_incoming=self.include_incoming,
            ),
            max_reflections_single=self.max_reflections_single,
            max_reflections_multi=self.max_reflections_multi,
        )


def make_planner(spec: str) -> PlannerBackend:
    kind, _, arg = spec.partition(":")
    if kind == "scripted":
        if not arg:
            raise ConfigError("scripted planner needs a fixture path: scripted:PATH")
        return ScriptedPlanner.from_file(arg)
    if kind == "remote":
        return RemotePlanner(ChatClient(ChatConfig.from_env()))
    raise ConfigError(f"unknown planner backend {spec!r}")


def make_matcher(cfg: RunConfig) -> Matcher:
    kind, _, arg = cfg.matcher.partition(":")
    matcher: Matcher
    if kind == "table":
        if not arg:
            raise ConfigError("table matcher needs a fixture path: table:PATH")
        matcher = TableMatcher.from_file(arg)
    elif kind == "lexical":
        matcher = LexicalMatcher(cfg.tau, cfg.tau_coarse)
    elif kind == "remote":
        matcher = RemoteMatcher(ChatClient(ChatConfig.from_env()), tau=cfg.tau, tau_coarse=cfg.tau_coarse)
    else:
        raise ConfigError(f"unknown matcher backend {cfg.matcher!r}")
    if cfg.false_negative_rate > 0:
        matcher = NoisyMatcher(matcher, cfg.false_negative_rate, cfg.seed)
    return matcher


def _load(cfg: RunConfig) -> KnowledgeGraph:
    try:
        return load_graph(cfg.graph, cfg.meta)
    except OSError as exc:
        raise ConfigError(f"cannot read graph: {exc}") from exc


def _path_doc(path: Sequence[Triple]) -> list[list[str]]:
    return [t.as_list() for t in path]


def result_document(result: PipelineResult, g: KnowledgeGraph, cfg: RunConfig) -> dict[str, Any]:
    doc = result.to_dict(g)
    doc["config"] = asdict(cfg)
    doc["metrics"] = {
        "llm_calls": result.ledger.llm_calls,
        "matcher_invocations": result.ledger.matcher_invocations,
        "flops_estimate": result.ledger.flops_estimate,
        "flops_is_estimate": True,
    }
    return doc


def cmd_run(cfg: RunConfig, question: str) -> tuple[int, dict[str, Any]]:
    g = _load(cfg)
    planner = make_planner(cfg.planner)
    matcher = make_matcher(cfg)
    tracer = Tracer()
    result = run_pipeline(question, g, planner, matcher, cfg.pipeline_config(), tracer=tracer)
    if cfg.trace:
        tracer.write(cfg.trace)
    return EXIT_OK, result_document(result, g, cfg)


def _parse_gold_path(raw: Any) -> tuple[Triple, ...]:
    return tuple(Triple(*step) for step in raw)


def _eval_one(index: int, line: str, g: KnowledgeGraph, cfg: RunConfig, planner: PlannerBackend, matcher: Matcher) -> dict[str, Any]:
    row: dict[str, Any] = {"index": index}
    try:
        item = json.loads(line)
        question = item["question"]
        gold_answers = set(item["gold_answers"])
        gold_paths = [_parse_gold_path(p) for p in item["gold_paths"]] if item.get("gold_paths") else None
    except (ValueError, KeyError, TypeError) as exc:
        row["error"] = f"malformed dataset line: {exc}"
        return row

    row["question"] = question
    try:
        result = run_pipeline(question, g, planner, matcher, cfg.pipeline_config())
    except Exception as exc:  # one bad question must not abort the batch
        logger.exception("question %d failed", index)
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row

    ledger = result.ledger
    row.update(
        status="answered" if result.answered else "failed",
        final_entities=result.final_entities,
        hits_at_1=hits_at_1(result.final_entities, gold_answers),
        llm_calls=ledger.llm_calls,
        reflections=result.reflections,
        hop_class="single" if result.iterations and result.iterations[0].plan.hop_count <= 1 else "multi",
        flops_estimate=ledger.flops_estimate,
        pruning_recall=None,
        cost_efficiency=None,
    )
    if gold_paths:
        try:
            recall = pruning_recall(result.final_paths(), gold_paths)
            row["pruning_recall"] = recall
            row["cost_efficiency"] = cost_efficiency(recall, ledger.flops_estimate)
        except UndefinedMetricError as exc:
            row["recall_note"] = str(exc)
    return row


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def cmd_eval(cfg: RunConfig, dataset: str | Path) -> tuple[int, dict[str, Any]]:
    g = _load(cfg)
    planner = make_planner(cfg.planner)
    matcher = make_matcher(cfg)
    try:
        lines = [l for l in Path(dataset).read_text(encoding="utf-8").splitlines() if l.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read dataset: {exc}") from exc

    def job(args: tuple[int, str]) -> dict[str, Any]:
        return _eval_one(args[0], args[1], g, cfg, planner, matcher)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        rows = list(pool.map(job, enumerate(lines)))

    ok = [r for r in rows if "error" not in r]
    recalls = [r["pruning_recall"] for r in ok if r.get("pruning_recall") is not None]
    effs = [r["cost_efficiency"] for r in ok if r.get("cost_efficiency") is not None]
    summary = {
        "questions": len(rows),
        "errors": len(rows) - len(ok),
        "hits_at_1": _mean([r["hits_at_1"] for r in ok]),
        "hits_at_1_count": sum(r["hits_at_1"] for r in ok),
        "llm_calls": _mean([r["llm_calls"] for r in ok]),
        "llm_calls_single_hop": _mean([r["llm_calls"] for r in ok if r["hop_class"] == "single"]),
        "llm_calls_multi_hop": _mean([r["llm_calls"] for r in ok if r["hop_class"] == "multi"]),
        "flops_estimate": _mean([r["flops_estimate"] for r in ok]),
        "pruning_recall": _mean(recalls),
        "cost_efficiency": _mean(effs),
        "pruning_recall_available": bool(recalls),
    }
    return EXIT_OK, {"aggregate": summary, "questions": rows}


def cmd_oracle(cfg: RunConfig, seeds: Sequence[str], depth: int, type_prefix: str | None = None) -> tuple[int, dict[str, Any]]:
    g = _load(cfg)
    pred = type_filter(type_prefix) if type_prefix else None
    try:
        paths = brute_force_paths(g, seeds, depth, pred)
    except OracleLimitError as exc:
        raise ConfigError(str(exc)) from exc
    return EXIT_OK, {
        "seeds": sorted(set(seeds)),
        "depth": depth,
        "type_filter": type_prefix,
        "count": len(paths),
        "paths": [_path_doc(p) for p in paths],
    }


def _threshold(text: str) -> int | None:
    if text.lower() in ("inf", "none", "0"):
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("branch threshold must be >= 1 (or 'inf')")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--graph", required=True, help="triples TSV")
    common.add_argument("--meta", help="entity metadata TSV")
    common.add_argument("--planner", default="remote", help="scripted:PATH | remote")
    common.add_argument("--matcher", default="lexical", help="table:PATH | lexical | remote")
    common.add_argument("--depth-cap", type=int, default=3)
    common.add_argument("--branch-threshold", type=_threshold, default=8, help="tails kept per relation; 'inf' for no limit")
    common.add_argument("--tau", type=float, default=DEFAULT_TAU)
    common.add_argument("--tau-coarse", type=float, default=DEFAULT_TAU_COARSE)
    common.add_argument("--max-reflections-single", type=int, default=5)
    common.add_argument("--max-reflections-multi", type=int, default=10)
    common.add_argument("--include-incoming", action="store_true", help="also walk edges backwards")
    common.add_argument("--false-negative-rate", type=float, default=0.0, help="inject matcher false negatives")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trace", help="write line-delimited trace events here (run only)")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--output", "-o", help="write the result document here instead of stdout")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="kgpilot", description="Plan, explore and reflect over a knowledge graph.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="answer one question")
    run.add_argument("question")

    ev = sub.add_parser("eval", parents=[common], help="evaluate a JSONL dataset")
    ev.add_argument("dataset")

    orc = sub.add_parser("oracle", parents=[common], help="enumerate all paths by brute force")
    orc.add_argument("--seeds", required=True, help="comma-separated entity ids")
    orc.add_argument("--depth", type=int, required=True)
    orc.add_argument("--type-filter", help="keep paths whose terminal carries this type (or a subtype)")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        graph=args.graph,
        meta=args.meta,
        planner=args.planner,
        matcher=args.matcher,
        depth_cap=args.depth_cap,
        branch_threshold=args.branch_threshold,
        tau=args.tau,
        tau_coarse=args.tau_coarse,
        max_reflections_single=args.max_reflections_single,
        max_reflections_multi=args.max_reflections_multi,
        include_incoming=args.include_incoming,
        false_negative_rate=args.false_negative_rate,
        seed=args.seed,
        trace=args.trace,
        workers=args.workers,
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "run":
            status, doc = cmd_run(cfg, args.question)
        elif args.command == "eval":
            status, doc = cmd_eval(cfg, args.dataset)
        else:
            seeds = [s for s in args.seeds.split(",") if s]
            status, doc = cmd_oracle(cfg, seeds, args.depth, args.type_filter)
    except (ConfigError, GraphError, OSError, ValueError, KeyError) as exc:
        print(f"kgpilot: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    text = json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
