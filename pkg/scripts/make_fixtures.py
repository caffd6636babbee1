#!/usr/bin/env python3
"""Regenerate the bundled fixtures: benchmark files, similarity matrix, and
canned search payloads. Deterministic; run from the repository root."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from mrag.dataset import (  # noqa: E402
    BenchmarkInstance,
    diversity_score,
    load_instances,
    load_similarity_matrix,
    save_instances,
)
from mrag.plan import Plan, PlanStep, ToolKind, ValueRef  # noqa: E402

FIXTURES = ROOT / "fixtures"


def _respond(index: int, **wires: ValueRef) -> PlanStep:
    args = {
        "image": ValueRef.input_image(),
        "question": ValueRef.input_question(),
        **wires,
    }
    return PlanStep(index=index, tool=ToolKind.RESPOND, args=args)


def type1_plan() -> Plan:
    return Plan(steps=(_respond(0),))


def type2_plan() -> Plan:
    return Plan(
        steps=(
            PlanStep(0, ToolKind.IMAGE_SEARCH, {"image": ValueRef.input_image()}),
            _respond(1, image_search=ValueRef.step_output(0)),
        )
    )


def type3_requery_plan() -> Plan:
    return Plan(
        steps=(
            PlanStep(
                0,
                ToolKind.REQUERY,
                {"image": ValueRef.input_image(), "question": ValueRef.input_question()},
            ),
            PlanStep(1, ToolKind.TEXT_SEARCH, {"query": ValueRef.step_output(0)}),
            _respond(2, text_search=ValueRef.step_output(1)),
        )
    )


def type3_literal_plan(query: str) -> Plan:
    return Plan(
        steps=(
            PlanStep(0, ToolKind.TEXT_SEARCH, {"query": ValueRef.literal(query)}),
            _respond(1, text_search=ValueRef.step_output(0)),
        )
    )


def type4_plan() -> Plan:
    return Plan(
        steps=(
            PlanStep(0, ToolKind.IMAGE_SEARCH, {"image": ValueRef.input_image()}),
            PlanStep(
                1,
                ToolKind.REQUERY,
                {
                    "image": ValueRef.input_image(),
                    "question": ValueRef.input_question(),
                    "context": ValueRef.step_output(0),
                },
            ),
            PlanStep(2, ToolKind.TEXT_SEARCH, {"query": ValueRef.step_output(1)}),
            _respond(
                3,
                image_search=ValueRef.step_output(0),
                text_search=ValueRef.step_output(2),
            ),
        )
    )


# (type, image, question, answer, entity-or-query)
MINI_ROWS = [
    (1, "images/street_bus.jpg", "What color is the double-decker bus?", "red", None),
    (1, "images/kitchen_table.jpg", "How many apples are on the table?", "three", None),
    (1, "images/park_bench.jpg", "Is it raining in this picture?", "no", None),
    (1, "images/classroom.jpg", "What shape is the clock on the wall?", "round", None),
    (1, "images/harbor_sunset.jpg", "Is this photo taken during the day or at night?", "day", None),
    (2, "images/bird_crest.jpg", "What species is the bird in this photo?", "hoopoe", "hoopoe"),
    (2, "images/waterfall_cliff.jpg", "Which waterfall is shown here?", "Skogafoss", "Skogafoss waterfall"),
    (2, "images/painting_hall.jpg", "Who painted the artwork shown?", "Johannes Vermeer", "Girl with a Pearl Earring"),
    (2, "images/stadium_aerial.jpg", "Which stadium is pictured?", "Camp Nou", "Camp Nou stadium"),
    (2, "images/mountain_ridge.jpg", "What mountain is this?", "Mount Rainier", "Mount Rainier"),
    (3, "images/museum_sign.jpg", "What is the current adult ticket price for this museum?", "22 euros", "louvre museum adult ticket price"),
    (3, "images/phone_box.jpg", "What year was this phone model released?", "2023", "pixel 8 release year"),
    (3, "images/book_cover.jpg", "Who won the literary award named on this cover last year?", "Han Kang", None),
    (3, "images/rocket_pad.jpg", "When is the next launch of this rocket scheduled?", "March 14", None),
    (3, "images/team_badge.jpg", "Who is the current head coach of this club?", "Hansi Flick", "fc barcelona head coach"),
    (4, "images/singer_stage.jpg", "What is the latest album released by this singer?", "Eternal Sunshine", "Ariana Grande"),
    (4, "images/politician_podium.jpg", "What office does this person currently hold?", "prime minister", "Keir Starmer"),
    (4, "images/bridge_fog.jpg", "How long did the renovation of this bridge take?", "four years", "Golden Gate Bridge"),
    (4, "images/athlete_track.jpg", "What is this athlete's world record time?", "10.49 seconds", "Florence Griffith-Joyner"),
    (4, "images/building_glass.jpg", "Which company is headquartered in this building?", "Salesforce", "Salesforce Tower"),
]

MICRO_ROWS = [
    (1, "images/red_car.jpg", "What color is the car?", "red", None),
    (2, "images/tall_tower.jpg", "Which tower is this?", "Eiffel Tower", "Eiffel Tower"),
    (3, "images/cinema_poster.jpg", "When does this film premiere?", "June 12", "dune part three premiere date"),
    (4, "images/ceo_keynote.jpg", "What company does this speaker lead?", "Acme Corp", "Jane Doe keynote"),
]


def build_instances(rows, prefix: str) -> list[BenchmarkInstance]:
    instances = []
    requery_toggle = True
    for i, (qtype, image, question, answer, hint) in enumerate(rows, start=1):
        if qtype == 1:
            plan = type1_plan()
        elif qtype == 2:
            plan = type2_plan()
        elif qtype == 3:
            if hint is not None:
                plan = type3_literal_plan(hint)
            else:
                plan = type3_requery_plan()
            requery_toggle = not requery_toggle
        else:
            plan = type4_plan()
        instances.append(
            BenchmarkInstance(
                id=f"{prefix}{i:03d}",
                image=image,
                question=question,
                type=qtype,
                gold_plan=plan,
                gold_answer=answer,
            )
        )
    return instances


def build_search_fixtures(rows) -> tuple[dict, dict]:
    image_fixture: dict[str, list[dict]] = {}
    text_fixture: dict[str, list[dict]] = {}
    for qtype, image, question, answer, hint in rows:
        if qtype in (2, 4) and hint:
            image_fixture[image] = [
                {
                    "title": f"{hint} - overview",
                    "content": f"Pages featuring visually similar images identify this as {hint}.",
                    "source": f"https://imagesearch.example/{hint.replace(' ', '-').lower()}",
                },
                {
                    "title": f"{hint} in the news",
                    "content": f"Recent coverage mentioning {hint}. The answer is {answer}.",
                    "source": "https://news.example/recent",
                },
            ]
        if qtype == 3 and hint:
            text_fixture[hint] = [
                {
                    "title": f"Results for {hint}",
                    "content": f"According to current sources, the answer is {answer}.",
                    "source": f"https://search.example/{hint.replace(' ', '+')}",
                }
            ]
    return image_fixture, text_fixture


def build_similarity(n: int, seed: int = 7) -> np.ndarray:
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(n, 16))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    cosine = vectors @ vectors.T
    base = (np.ones((n, n)) + cosine) / 2.0  # PSD, entries in [0, 1], unit diagonal
    matrix = 0.95 * base + 0.05 * np.eye(n)
    np.fill_diagonal(matrix, 1.0)
    return matrix


def write_similarity(matrix: np.ndarray, path: Path) -> None:
    n = matrix.shape[0]
    lines = [str(n)]
    for row in matrix:
        lines.append(" ".join(f"{v:.8f}" for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    (FIXTURES / "search_fixtures").mkdir(exist_ok=True)

    mini = build_instances(MINI_ROWS, "r")
    micro = build_instances(MICRO_ROWS, "m")
    save_instances(mini, FIXTURES / "remplan_mini.jsonl")
    save_instances(micro, FIXTURES / "remplan_micro.jsonl")

    image_fixture, text_fixture = build_search_fixtures(MINI_ROWS + MICRO_ROWS)
    (FIXTURES / "search_fixtures" / "image_search.json").write_text(
        json.dumps(image_fixture, indent=2) + "\n", encoding="utf-8"
    )
    (FIXTURES / "search_fixtures" / "text_search.json").write_text(
        json.dumps(text_fixture, indent=2) + "\n", encoding="utf-8"
    )

    matrix = build_similarity(len(mini))
    write_similarity(matrix, FIXTURES / "similarity_20.txt")

    # sanity: everything loads back and the written matrix stays usable
    assert len(load_instances(FIXTURES / "remplan_mini.jsonl")) == len(mini)
    assert len(load_instances(FIXTURES / "remplan_micro.jsonl")) == len(micro)
    loaded = load_similarity_matrix(FIXTURES / "similarity_20.txt")
    score = diversity_score(loaded)
    print(f"wrote {len(mini)}+{len(micro)} instances; diversity={score:.4f}")


if __name__ == "__main__":
    main()
