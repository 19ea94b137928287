"""Regenerate the offline fixture suites in this directory.

    python fixtures/build.py

Every suite is a directory with graph.tsv, meta.tsv, planner.json, an
optional matcher.json (TableMatcher) and dataset.jsonl. Output is fully
deterministic; tests check the committed files match a fresh build.
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

from kgpilot.explore import select_representative
from kgpilot.graph import Entity, KnowledgeGraph, Triple, dump_graph

HERE = Path(__file__).resolve().parent


def write_suite(name: str, entities, triples, planner, dataset, matcher=None, out: Path = HERE) -> None:
    d = out / name
    d.mkdir(parents=True, exist_ok=True)
    g = KnowledgeGraph(entities, [Triple(*t) for t in triples])
    dump_graph(g, d / "graph.tsv", d / "meta.tsv")
    (d / "planner.json").write_text(json.dumps(planner, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if matcher is not None:
        (d / "matcher.json").write_text(json.dumps(matcher, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (d / "dataset.jsonl").write_text("".join(json.dumps(row, sort_keys=True) + "\n" for row in dataset), encoding="utf-8")


def E(eid: str, label: str, types: str, description: str = "") -> Entity:
    return Entity(eid, label, description, frozenset(t for t in types.split(",") if t))


# ---------------------------------------------------------------------------
# Tour / college: resolves through the performer to the college.
# ---------------------------------------------------------------------------

TOUR_QUESTION = "Where did the 'Country Nation World Tour' concert artist go to college?"


def tour(out: Path) -> None:
    entities = [
        E("cnwt", "Country Nation World Tour", "other/event/concert_tour", "2014 concert tour"),
        E("brad_paisley", "Brad Paisley", "person/artist/music", "American country music singer"),
        E("the_band_perry", "The Band Perry", "organization/music", "country music group"),
        E("bridgestone_arena", "Bridgestone Arena", "location/structure/sports_facility", "indoor arena"),
        E("belmont", "Belmont University", "organization/education", "private university in Nashville"),
        E("glen_dale", "Glen Dale", "location/city", "city in West Virginia"),
        E("kimberly", "Kimberly Williams-Paisley", "person/artist/actor", "American actress"),
        E("country_music", "Country music", "other/art/music", "music genre"),
        E("arista_nashville", "Arista Nashville", "organization/company", "record label"),
        E("nashville", "Nashville", "location/city", "capital of Tennessee"),
        E("northwestern", "Northwestern University", "organization/education", "private university in Illinois"),
    ]
    triples = [
        ("cnwt", "performer", "brad_paisley"),
        ("cnwt", "opening_act", "the_band_perry"),
        ("cnwt", "venue", "bridgestone_arena"),
        ("brad_paisley", "educated_at", "belmont"),
        ("brad_paisley", "place_of_birth", "glen_dale"),
        ("brad_paisley", "spouse", "kimberly"),
        ("brad_paisley", "genre", "country_music"),
        ("brad_paisley", "record_label", "arista_nashville"),
        ("belmont", "located_in", "nashville"),
        ("bridgestone_arena", "located_in", "nashville"),
        ("kimberly", "educated_at", "northwestern"),
        ("the_band_perry", "genre", "country_music"),
    ]
    planner = {
        "queries": {
            TOUR_QUESTION: {
                "seeds": ["Country Nation World Tour"],
                "sub_questions": [
                    "who is the performing artist of the tour",
                    "which college did that artist attend",
                ],
                "qualifiers": [],
                "answers": [
                    {"text": "Kenny Chesney", "types": ["person/artist/music"]},
                    {"text": "University of Tennessee", "types": ["organization/education"]},
                ],
                "match_specs": ["headlining performer", "college or university"],
                "final_constraint": "a college or university the artist attended",
            }
        }
    }
    matcher = {
        "types": {},
        "entries": [
            {"entity": "brad_paisley", "key": 1, "matched": True, "score": 0.95},
            {"entity": "the_band_perry", "key": 1, "matched": False, "score": 0.3},
            {"entity": "belmont", "key": 2, "matched": True, "score": 0.9},
        ],
    }
    dataset = [{"question": TOUR_QUESTION, "gold_answers": ["belmont"], "gold_paths": [[
        ["cnwt", "performer", "brad_paisley"], ["brad_paisley", "educated_at", "belmont"]]]}]
    write_suite("tour", entities, triples, planner, dataset, matcher, out)


# ---------------------------------------------------------------------------
# Copenhagen: a question built on a false premise; must fail loudly.
# ---------------------------------------------------------------------------

COPENHAGEN_QUESTION = "Copenhagen is the capital of which German neighboring country?"


def copenhagen(out: Path) -> None:
    entities = [
        E("copenhagen", "Copenhagen", "location/city", "capital city"),
        E("denmark", "Denmark", "location/country", "Nordic country"),
        E("germany", "Germany", "location/country", "country in Central Europe"),
        E("poland", "Poland", "location/country", "country in Central Europe"),
        E("sweden", "Sweden", "location/country", "Nordic country"),
        E("zealand", "Zealand", "location/geography/island", "largest Danish island"),
        E("oresund", "Oresund", "location/geography/body_of_water", "strait"),
    ]
    triples = [
        ("copenhagen", "capital_of", "denmark"),
        ("copenhagen", "located_on", "zealand"),
        ("copenhagen", "on_coast_of", "oresund"),
        ("denmark", "shares_border_with", "germany"),
        ("germany", "shares_border_with", "denmark"),
        ("germany", "shares_border_with", "poland"),
        ("poland", "shares_border_with", "germany"),
        ("oresund", "borders", "sweden"),
    ]
    flawed = {"text": "Poland", "types": ["location/country"]}
    planner = {
        "queries": {
            COPENHAGEN_QUESTION: {
                "seeds": ["Copenhagen", "German neighboring country"],
                "sub_questions": ["which German neighboring country has Copenhagen as its capital"],
                "qualifiers": [],
                "answers": [flawed],
                "match_specs": ["country bordering Germany whose capital is Copenhagen"],
                "final_constraint": "a country bordering Germany",
                "revisions": [
                    {
                        "sub_questions": ["which country next to Germany is governed from Copenhagen"],
                        "answers": [{"text": "Austria", "types": ["location/country"]}],
                    }
                ],
            }
        }
    }
    matcher = {
        "types": {},
        "entries": [
            {"entity": "denmark", "key": 1, "matched": False, "score": 0.2},
            {"entity": "zealand", "key": 1, "matched": False, "score": 0.0},
        ],
    }
    dataset = [{"question": COPENHAGEN_QUESTION, "gold_answers": []}]
    write_suite("copenhagen", entities, triples, planner, dataset, matcher, out)


# ---------------------------------------------------------------------------
# Call budgets (lexical matcher): solvable at once, after one revision, never.
# ---------------------------------------------------------------------------

BUDGET_SOLVED = "What is the capital of Denmark?"
BUDGET_ONE_REVISION = "Where was Denmark's head of state born?"
BUDGET_NEVER_SINGLE = "What currency does Denmark use?"
BUDGET_NEVER_MULTI = "Which island is the capital of Denmark located on?"


def budget(out: Path) -> None:
    entities = [
        E("denmark", "Denmark", "location/country"),
        E("copenhagen", "Copenhagen", "location/city"),
        E("aarhus", "Aarhus", "location/city"),
        E("danish_krone", "Danish krone", "other/currency"),
        E("margrethe", "Margrethe II", "person/political_figure"),
        E("zealand", "Zealand", "location/geography/island"),
    ]
    triples = [
        ("denmark", "capital", "copenhagen"),
        ("denmark", "contains", "aarhus"),
        ("denmark", "currency", "danish_krone"),
        ("denmark", "head_of_state", "margrethe"),
        ("margrethe", "place_of_birth", "copenhagen"),
        ("copenhagen", "located_on", "zealand"),
    ]
    planner = {
        "queries": {
            BUDGET_SOLVED: {
                "seeds": ["Denmark"],
                "sub_questions": ["what is the capital of Denmark"],
                "answers": [{"text": "Copenhagen", "types": ["location/city"]}],
            },
            BUDGET_ONE_REVISION: {
                "seeds": ["Denmark"],
                "sub_questions": ["who is the head of state of Denmark", "where was that person born"],
                # wrong expected type on the second hop; the revision fixes it
                "answers": [
                    {"text": "Margrethe II", "types": ["person/political_figure"]},
                    {"text": "Copenhagen", "types": ["person"]},
                ],
                "revisions": [
                    {
                        "answers": [
                            {"text": "Margrethe II", "types": ["person/political_figure"]},
                            {"text": "Copenhagen", "types": ["location/city"]},
                        ]
                    }
                ],
            },
            BUDGET_NEVER_SINGLE: {
                "seeds": ["Denmark"],
                "sub_questions": ["what currency does Denmark use"],
                "answers": [{"text": "Euro", "types": ["other/currency"]}],
                "revisions": [{"answers": [{"text": "Euro coin", "types": ["other/currency"]}]}],
            },
            BUDGET_NEVER_MULTI: {
                "seeds": ["Denmark"],
                "sub_questions": ["what is the capital of Denmark", "which island is that city on"],
                "answers": [
                    {"text": "Copenhagen", "types": ["location/city"]},
                    {"text": "Funen", "types": ["location/geography/island"]},
                ],
            },
        }
    }
    dataset = [
        {"question": BUDGET_SOLVED, "gold_answers": ["copenhagen"]},
        {"question": BUDGET_ONE_REVISION, "gold_answers": ["copenhagen"]},
        {"question": BUDGET_NEVER_SINGLE, "gold_answers": ["danish_krone"]},
        {"question": BUDGET_NEVER_MULTI, "gold_answers": ["zealand"]},
    ]
    write_suite("budget", entities, triples, planner, dataset, None, out)


# ---------------------------------------------------------------------------
# Reflection regression suite (lexical matcher): question k needs a fixed
# number of revisions before its plan becomes correct.
# ---------------------------------------------------------------------------

REVISIONS_NEEDED = [0, 0, 1, 1, 2, 2, 3, 3, 4, 5, 5, 7]
_COLORS = ["Amber", "Cobalt", "Crimson", "Jade", "Ivory", "Onyx", "Saffron", "Teal", "Umber", "Violet", "Scarlet", "Indigo"]


def regression(out: Path) -> None:
    entities: list[Entity] = []
    triples: list[tuple[str, str, str]] = []
    queries: dict = {}
    dataset = []
    for k, needed in enumerate(REVISIONS_NEEDED):
        color = _COLORS[k]
        seed, hub, answer = f"q{k}_company", f"q{k}_founder", f"q{k}_award"
        entities += [
            E(seed, f"{color} Industries", "organization/company"),
            E(hub, f"{color} Founder", "person"),
            E(answer, f"{color} Medal", "other/award"),
            E(f"q{k}_city", f"{color} City", "location/city"),
            E(f"q{k}_rival", f"{color} Rival Medal", "other/award"),
            E(f"q{k}_product", f"{color} Phone", "other/product/mobile_phone"),
        ]
        two_hop = k % 3 == 2
        if two_hop:
            triples += [
                (seed, "founded_by", hub),
                (seed, "headquarters", f"q{k}_city"),
                (seed, "product", f"q{k}_product"),
                (hub, "award_received", answer),
                (hub, "place_of_birth", f"q{k}_city"),
            ]
            question = f"Which award did the founder of {color} Industries receive?"
            subqs = [f"who founded {color} Industries", "which award did that person receive"]
            good = [{"text": f"{color} Founder", "types": ["person"]}, {"text": f"{color} Medal", "types": ["other/award"]}]
            bad_types = [{"text": f"{color} Founder", "types": ["person"]}, {"text": f"{color} Medal", "types": ["person/athlete"]}]
            bad_text = [{"text": f"{color} Founder", "types": ["person"]}, {"text": "Golden Laurel", "types": ["other/award"]}]
            gold_path = [[seed, "founded_by", hub], [hub, "award_received", answer]]
        else:
            triples += [
                (seed, "award_received", answer),
                (seed, "headquarters", f"q{k}_city"),
                (seed, "product", f"q{k}_product"),
                (f"q{k}_city", "award_received", f"q{k}_rival"),
            ]
            question = f"Which award did {color} Industries receive?"
            subqs = [f"which award did {color} Industries receive"]
            good = [{"text": f"{color} Medal", "types": ["other/award"]}]
            bad_types = [{"text": f"{color} Medal", "types": ["person/athlete"]}]
            bad_text = [{"text": "Golden Laurel", "types": ["other/award"]}]
            gold_path = [[seed, "award_received", answer]]

        wrong = [bad_types, bad_text]
        entry: dict = {"seeds": [f"{color} Industries"], "sub_questions": subqs}
        if needed == 0:
            entry["answers"] = good
        else:
            entry["answers"] = wrong[0]
            stages = [{"answers": wrong[(i + 1) % 2]} for i in range(needed - 1)] + [{"answers": good}]
            entry["revisions"] = stages
        queries[question] = entry
        dataset.append({"question": question, "gold_answers": [answer], "gold_paths": [gold_path], "revisions_needed": needed})
    write_suite("regression", entities, triples, {"queries": queries}, dataset, None, out)


# ---------------------------------------------------------------------------
# Gold-path suite (table matcher): random components with a planted gold path.
# ---------------------------------------------------------------------------

GOLD_QUESTIONS = 12
_REL = ["r_alpha", "r_beta", "r_gamma", "r_delta", "r_eps"]
_TYPES = ["person/artist", "organization/company", "location/city", "other/award", "other/event"]


def gold_component(rng: random.Random, q: int, size: int = 30) -> tuple[list[Entity], list[tuple[str, str, str]], list[str], list[tuple[str, str, str]]]:
    ids = [f"g{q}_n{i:02d}" for i in range(size)]
    entities = [E(eid, f"node {q} {i}", rng.choice(_TYPES)) for i, eid in enumerate(ids)]
    triples = set()
    for h in ids:
        for _ in range(rng.randint(1, 4)):
            t = rng.choice(ids)
            if t != h:
                triples.add((h, rng.choice(_REL), t))
    depth = 2 + q % 2
    while True:
        node = ids[0]
        path = []
        seen = {node}
        for _ in range(depth):
            options = sorted(t for t in triples if t[0] == node and t[2] not in seen)
            if not options:
                break
            step = rng.choice(options)
            path.append(step)
            node = step[2]
            seen.add(node)
        if len(path) == depth:
            return entities, sorted(triples), ids, path
        triples.add((ids[0], rng.choice(_REL), rng.choice(ids[1:])))


def goldpaths(out: Path) -> None:
    rng = random.Random(20240611)
    entities: list[Entity] = []
    triples: list[tuple[str, str, str]] = []
    comps = []
    for q in range(GOLD_QUESTIONS):
        ents, trs, ids, path = gold_component(rng, q)
        entities += ents
        triples += trs
        comps.append((q, ents, path))
    g = KnowledgeGraph(entities, [Triple(*t) for t in triples])

    queries: dict = {}
    table: dict[tuple[str, int], float] = {}
    dataset = []
    for q, ents, path in comps:
        by_id = {e.id: e for e in ents}
        for hop, (h, r, t) in enumerate(path, 1):
            rep = select_representative(g, h, r)
            table[(rep, hop)] = max(table.get((rep, hop), 0.0), 0.9)
            table[(t, hop)] = 1.0
        terminal = by_id[path[-1][2]]
        question = f"Gold question {q}: where does the planted path from {path[0][0]} end?"
        queries[question] = {
            "seeds": [path[0][0]],
            "sub_questions": [f"hop {i + 1} of the planted path" for i in range(len(path))],
            "answers": [{"text": by_id[t].label, "types": sorted(by_id[t].fine_types)} for _, _, t in path],
            "final_constraint": f"typed {sorted(terminal.fine_types)[0]}",
        }
        dataset.append({"question": question, "gold_answers": [terminal.id], "gold_paths": [[list(s) for s in path]]})
    matcher = {
        "types": {},
        "entries": [{"entity": e, "key": k, "matched": True, "score": s} for (e, k), s in sorted(table.items())],
    }
    write_suite("goldpaths", entities, triples, {"queries": queries}, dataset, matcher, out)


def build_all(out: Path = HERE) -> None:
    tour(out)
    copenhagen(out)
    budget(out)
    regression(out)
    goldpaths(out)


if __name__ == "__main__":
    build_all(Path(sys.argv[1]) if len(sys.argv) > 1 else HERE)
