"""Knowledge-graph question answering by global planning, pruned exploration and self-reflection."""

from kgpilot.explore import ExplorationResult, ExploreConfig, ProblemKind, ProblemReport, ReasoningPath, kg_explore, select_representative
from kgpilot.graph import Entity, KnowledgeGraph, Triple, extract_subgraph, load_graph
from kgpilot.matching import ConstantMatcher, LexicalMatcher, MatchVerdict, NoisyMatcher, RemoteMatcher, TableMatcher
from kgpilot.metrics import CostLedger, ModelProfile, brute_force_paths, cost_efficiency, flops_estimate, hits_at_1, pruning_recall
from kgpilot.planning import Plan, RemotePlanner, ScriptedPlanner, build_plan, revise_plan
from kgpilot.reflect import AnswerSet, Confidence, PipelineConfig, PipelineResult, aggregate, run_pipeline, verify_path

__version__ = "0.1.0"
