import filecmp
import importlib.util
import json
import subprocess
import sys

import pytest

from kgpilot.cli import RunConfig, cmd_eval, cmd_oracle, cmd_run, main

from conftest import FIXTURES, load_suite

TOUR_Q = "Where did the 'Country Nation World Tour' concert artist go to college?"
COPENHAGEN_Q = "Copenhagen is the capital of which German neighboring country?"


def run_cli(args, tmp_path, name="out.json"):
    out = tmp_path / name
    code = main([*args, "--output", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_run_tour(tmp_path):
    s = load_suite("tour")
    code, doc = run_cli(["run", *s.cli_args(), "--trace", str(tmp_path / "t.jsonl"), TOUR_Q], tmp_path)
    assert code == 0
    assert doc["answer"]["final_entities"] == ["belmont"]
    assert doc["answer"]["confidence"] == "HIGH"
    assert doc["metrics"]["llm_calls"] == 2 and doc["ledger"]["llm_calls"] == 2
    assert (tmp_path / "t.jsonl").read_text().count("\n") > 5


def test_run_copenhagen_fails_loudly(tmp_path):
    s = load_suite("copenhagen")
    code, doc = run_cli(["run", *s.cli_args(), COPENHAGEN_Q], tmp_path)
    assert code == 0
    assert doc["status"] == "failed" and doc["answer"] is None
    assert any(p["kind"] == "UNMATCHED_PATH" for p in doc["failure"]["problems"])
    clues = [it["clues"] for it in doc["iterations"] if it["clues"]]
    assert len(clues) == len(doc["iterations"]) == 6


def test_run_twice_is_byte_identical(tmp_path):
    s = load_suite("regression")
    q = "Which award did the founder of Indigo Industries receive?"
    args = ["run", *s.cli_args(), "--trace", str(tmp_path / "t.jsonl"), "--output", str(tmp_path / "o.json"), q]
    assert main(args) == 0
    first = (tmp_path / "o.json").read_bytes(), (tmp_path / "t.jsonl").read_bytes()
    assert main(args) == 0
    assert first == ((tmp_path / "o.json").read_bytes(), (tmp_path / "t.jsonl").read_bytes())


def test_unanswerable_is_exit_zero(tmp_path):
    s = load_suite("tour")
    code, doc = run_cli(["run", *s.cli_args(), "What is the meaning of life?"], tmp_path)
    assert code == 0 and doc["failure"]["reason"] == "unanswerable"


@pytest.mark.parametrize("bad", [
    ["--graph", "/nonexistent/graph.tsv"],
    ["--matcher", "table:/nonexistent/m.json"],
    ["--matcher", "telepathy"],
    ["--planner", "psychic"],
    ["--max-reflections-single", "-1"],
    ["--depth-cap", "0"],
])
def test_operational_errors_exit_nonzero(tmp_path, bad, capsys):
    s = load_suite("tour")
    args = s.cli_args()
    for i in range(0, len(bad), 2):
        flag = bad[i]
        if flag in args:
            args[args.index(flag) + 1] = bad[i + 1]
        else:
            args += bad[i:i + 2]
    code, _ = run_cli(["run", *args, TOUR_Q], tmp_path)
    assert code != 0
    assert "error" in capsys.readouterr().err


def test_malformed_graph_exit_nonzero(tmp_path, capsys):
    (tmp_path / "g.tsv").write_text("a\tb\n")
    code, _ = run_cli(["oracle", "--graph", str(tmp_path / "g.tsv"), "--seeds", "a", "--depth", "1"], tmp_path)
    assert code == 2
    assert ":1:" in capsys.readouterr().err


def test_oracle_chain_and_tree(tmp_path):
    (tmp_path / "chain.tsv").write_text("a\tr\tb\nb\tr\tc\nc\tr\td\n")
    code, doc = run_cli(["oracle", "--graph", str(tmp_path / "chain.tsv"), "--seeds", "a", "--depth", "2"], tmp_path)
    assert code == 0 and doc["count"] == 1
    assert doc["paths"] == [[["a", "r", "b"], ["b", "r", "c"]]]
    lines = "".join(f"n{i}\tchild\tn{2 * i + c}\n" for i in range(1, 8) for c in (0, 1))
    (tmp_path / "tree.tsv").write_text(lines)
    code, doc = run_cli(["oracle", "--graph", str(tmp_path / "tree.tsv"), "--seeds", "n1", "--depth", "3"], tmp_path)
    assert code == 0 and doc["count"] == 8


def test_oracle_refuses_oversized(tmp_path):
    (tmp_path / "chain.tsv").write_text("a\tr\tb\n")
    code, _ = run_cli(["oracle", "--graph", str(tmp_path / "chain.tsv"), "--seeds", "a", "--depth", "9"], tmp_path)
    assert code != 0


def cfg_for(name, **kw):
    s = load_suite(name)
    matcher = f"table:{s.matcher_path}" if s.matcher_path else "lexical"
    return RunConfig(graph=str(s.root / "graph.tsv"), meta=str(s.root / "meta.tsv"),
                     planner=f"scripted:{s.root / 'planner.json'}", matcher=matcher, **kw)


def test_eval_hits_match_hand_tally():
    # revisions needed per question: 0 0 1 1 2 2 3 3 4 5 5 7
    for cap, tally in [(0, 2), (2, 6), (5, 11), (7, 12)]:
        _, doc = cmd_eval(cfg_for("regression", max_reflections_single=cap, max_reflections_multi=cap), FIXTURES / "regression" / "dataset.jsonl")
        assert doc["aggregate"]["hits_at_1_count"] == tally
        assert doc["aggregate"]["questions"] == 12


def test_eval_gold_paths_present():
    _, doc = cmd_eval(cfg_for("goldpaths"), FIXTURES / "goldpaths" / "dataset.jsonl")
    assert doc["aggregate"]["pruning_recall_available"]
    for row in doc["questions"]:
        assert row["pruning_recall"] is not None and row["cost_efficiency"] is not None


def test_eval_without_gold_paths_marks_unavailable():
    _, doc = cmd_eval(cfg_for("budget"), FIXTURES / "budget" / "dataset.jsonl")
    assert doc["aggregate"]["pruning_recall_available"] is False
    assert doc["aggregate"]["pruning_recall"] is None
    assert all(row["pruning_recall"] is None for row in doc["questions"])
    assert doc["aggregate"]["llm_calls_single_hop"] == (2 + 12) / 2
    assert doc["aggregate"]["llm_calls_multi_hop"] == (4 + 22) / 2


def test_eval_survives_malformed_lines(tmp_path):
    lines = (FIXTURES / "budget" / "dataset.jsonl").read_text().splitlines()
    data = tmp_path / "d.jsonl"
    data.write_text("\n".join([lines[0], "{not json", '{"question": "no gold"}', lines[1]]) + "\n")
    _, doc = cmd_eval(cfg_for("budget"), data)
    assert doc["aggregate"]["errors"] == 2
    assert [("error" in r) for r in doc["questions"]] == [False, True, True, False]
    assert doc["aggregate"]["hits_at_1_count"] == 2


def test_eval_order_independent_of_workers():
    a = cmd_eval(cfg_for("regression", workers=1), FIXTURES / "regression" / "dataset.jsonl")[1]
    b = cmd_eval(cfg_for("regression", workers=6), FIXTURES / "regression" / "dataset.jsonl")[1]
    assert a["questions"] == b["questions"]


def test_cmd_run_and_oracle_direct():
    code, doc = cmd_run(cfg_for("tour"), TOUR_Q)
    assert code == 0 and doc["config"]["branch_threshold"] == 8
    code, doc = cmd_oracle(cfg_for("tour"), ["cnwt"], 2, "organization/education")
    assert code == 0 and [p[-1][2] for p in doc["paths"]] == ["belmont"]


def test_noise_flag_reaches_matcher():
    _, clean = cmd_eval(cfg_for("goldpaths"), FIXTURES / "goldpaths" / "dataset.jsonl")
    _, noisy = cmd_eval(cfg_for("goldpaths", false_negative_rate=0.5, seed=3), FIXTURES / "goldpaths" / "dataset.jsonl")
    assert noisy["aggregate"]["pruning_recall"] < clean["aggregate"]["pruning_recall"] == 1.0


def test_console_script_entry_point(tmp_path):
    (tmp_path / "g.tsv").write_text("a\tr\tb\n")
    proc = subprocess.run([sys.executable, "-m", "kgpilot.cli", "oracle", "--graph", str(tmp_path / "g.tsv"),
                           "--seeds", "a", "--depth", "1"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["count"] == 1


def test_committed_fixtures_match_builder(tmp_path):
    spec = importlib.util.spec_from_file_location("fixture_build", FIXTURES / "build.py")
    build = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(build)
    build.build_all(tmp_path)
    for suite in ("tour", "copenhagen", "budget", "regression", "goldpaths"):
        names = sorted(p.name for p in (FIXTURES / suite).iterdir())
        assert names == sorted(p.name for p in (tmp_path / suite).iterdir())
        match, mismatch, errors = filecmp.cmpfiles(FIXTURES / suite, tmp_path / suite, names, shallow=False)
        assert not mismatch and not errors, (suite, mismatch, errors)
