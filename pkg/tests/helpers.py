"""Shared test utilities: plan builders, hypothesis strategies, independent oracles."""

from __future__ import annotations

import random

from hypothesis import strategies as st

from mrag.dataset import BenchmarkInstance
from mrag.evaluation import PlanPair
from mrag.plan import Plan, PlanStep, RefKind, ToolKind, ValueRef


def make_instance(
    iid: str = "i1",
    image: str = "images/pic.jpg",
    question: str = "What tower is this?",
    qtype: int | None = None,
    gold_plan: Plan | None = None,
    gold_answer: str | None = None,
) -> BenchmarkInstance:
    return BenchmarkInstance(
        id=iid,
        image=image,
        question=question,
        type=qtype,
        gold_plan=gold_plan,
        gold_answer=gold_answer,
    )


def respond_step(index: int, **wires: ValueRef) -> PlanStep:
    args = {
        "image": ValueRef.input_image(),
        "question": ValueRef.input_question(),
        **wires,
    }
    return PlanStep(index=index, tool=ToolKind.RESPOND, args=args)


def type1_plan() -> Plan:
    return Plan(steps=(respond_step(0),))


def type2_plan() -> Plan:
    return Plan(
        steps=(
            PlanStep(0, ToolKind.IMAGE_SEARCH, {"image": ValueRef.input_image()}),
            respond_step(1, image_search=ValueRef.step_output(0)),
        )
    )


def type3_plan(query: str | None = None) -> Plan:
    """Requery chain when query is None, literal query otherwise."""
    if query is None:
        return Plan(
            steps=(
                PlanStep(
                    0,
                    ToolKind.REQUERY,
                    {
                        "image": ValueRef.input_image(),
                        "question": ValueRef.input_question(),
                    },
                ),
                PlanStep(1, ToolKind.TEXT_SEARCH, {"query": ValueRef.step_output(0)}),
                respond_step(2, text_search=ValueRef.step_output(1)),
            )
        )
    return Plan(
        steps=(
            PlanStep(0, ToolKind.TEXT_SEARCH, {"query": ValueRef.literal(query)}),
            respond_step(1, text_search=ValueRef.step_output(0)),
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
            respond_step(
                3,
                image_search=ValueRef.step_output(0),
                text_search=ValueRef.step_output(2),
            ),
        )
    )


ARCHETYPE_PLANS = {1: type1_plan, 2: type2_plan, 3: type3_plan, 4: type4_plan}


# --- hypothesis strategy for strictly valid plans ---------------------------

safe_literals = st.text(
    alphabet="abcdefghijklmnopqrstuvwxyz0123456789 ", min_size=1, max_size=30
).filter(lambda s: s.strip() != "")


@st.composite
def valid_plans(draw) -> Plan:
    """Random plans that pass strict validation, covering all archetypes,
    optional requery, optional context/result wiring, and literal queries."""
    archetype = draw(st.sampled_from([1, 2, 3, 4]))
    use_image = archetype in (2, 4)
    use_text = archetype in (3, 4)
    use_requery = draw(st.booleans()) if use_text else False

    steps: list[PlanStep] = []
    image_index = requery_index = text_index = None
    if use_image:
        image_index = len(steps)
        steps.append(
            PlanStep(image_index, ToolKind.IMAGE_SEARCH, {"image": ValueRef.input_image()})
        )
    if use_requery:
        args = {
            "image": ValueRef.input_image(),
            "question": ValueRef.input_question(),
        }
        if image_index is not None and draw(st.booleans()):
            args["context"] = ValueRef.step_output(image_index)
        requery_index = len(steps)
        steps.append(PlanStep(requery_index, ToolKind.REQUERY, args))
    if use_text:
        if use_requery and draw(st.booleans()):
            query = ValueRef.step_output(requery_index)
        else:
            query = ValueRef.literal(draw(safe_literals))
        text_index = len(steps)
        steps.append(PlanStep(text_index, ToolKind.TEXT_SEARCH, {"query": query}))

    respond_args = {
        "image": ValueRef.input_image(),
        "question": ValueRef.input_question(),
    }
    if image_index is not None and draw(st.booleans()):
        respond_args["image_search"] = ValueRef.step_output(image_index)
    if text_index is not None and draw(st.booleans()):
        respond_args["text_search"] = ValueRef.step_output(text_index)
    steps.append(PlanStep(len(steps), ToolKind.RESPOND, respond_args))
    return Plan(steps=tuple(steps))


# --- independent metric oracles ----------------------------------------------

# Hand-maintained schema table, deliberately separate from the implementation.
ORACLE_SCHEMA: dict[ToolKind, tuple[set[str], set[str]]] = {
    ToolKind.IMAGE_SEARCH: ({"image"}, set()),
    ToolKind.TEXT_SEARCH: ({"query"}, set()),
    ToolKind.REQUERY: ({"image", "question"}, {"context"}),
    ToolKind.RESPOND: ({"image", "question"}, {"image_search", "text_search"}),
    ToolKind.RERANK: ({"question", "snippets"}, set()),
}

_ORACLE_SNIPPET_SLOTS = {"context", "image_search", "text_search", "snippets"}
_ORACLE_SNIPPET_PRODUCERS = {
    ToolKind.IMAGE_SEARCH,
    ToolKind.TEXT_SEARCH,
    ToolKind.RERANK,
}
_ORACLE_TEXT_PRODUCERS = {ToolKind.REQUERY, ToolKind.RESPOND}


def oracle_param_valid(plan: Plan) -> bool:
    for step in plan.steps:
        required, optional = ORACLE_SCHEMA[step.tool]
        names = set(step.args)
        if not required <= names:
            return False
        if not names <= required | optional:
            return False
        for name, ref in step.args.items():
            if ref.kind is RefKind.STEP_OUTPUT:
                if ref.step is None or ref.step >= step.index:
                    return False
                producer = plan.steps[ref.step].tool
                if name in _ORACLE_SNIPPET_SLOTS:
                    if producer not in _ORACLE_SNIPPET_PRODUCERS:
                        return False
                elif producer not in _ORACLE_TEXT_PRODUCERS:
                    return False
            elif name in _ORACLE_SNIPPET_SLOTS:
                return False  # inputs and literals never carry snippets
            elif name == "image" and ref.kind is RefKind.INPUT_QUESTION:
                return False
            elif name in ("question", "query") and ref.kind is RefKind.INPUT_IMAGE:
                return False
    return True


def oracle_tool_pr(pairs, kind):
    tp = fp = fn = 0
    for pair in pairs:
        predicted = kind in [s.tool for s in pair.predicted.steps]
        gold = kind in [s.tool for s in pair.gold.steps]
        if predicted and gold:
            tp += 1
        elif predicted and not gold:
            fp += 1
        elif gold and not predicted:
            fn += 1
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return precision, recall


def oracle_plan_accuracy(pairs):
    matches = 0
    for pair in pairs:
        if [s.tool for s in pair.predicted.steps] == [s.tool for s in pair.gold.steps]:
            matches += 1
    return matches / len(pairs)


def oracle_param_accuracy(pairs):
    return sum(oracle_param_valid(p.predicted) for p in pairs) / len(pairs)


# --- random pair-set generation (seeded, non-hypothesis) ---------------------


def _random_plan(rng: random.Random) -> Plan:
    """A structurally parseable plan with canonical wiring plus injected
    parameter defects: dropped required args, unknown args, dangling refs,
    literals in snippet slots."""
    kinds = []
    if rng.random() < 0.6:
        kinds.append(ToolKind.IMAGE_SEARCH)
    if rng.random() < 0.4:
        kinds.append(ToolKind.REQUERY)
    if rng.random() < 0.6:
        kinds.append(ToolKind.TEXT_SEARCH)
    rng.shuffle(kinds)
    if rng.random() < 0.9:
        kinds.append(ToolKind.RESPOND)
    elif kinds:
        kinds.insert(rng.randrange(len(kinds)), ToolKind.RESPOND)
    else:
        kinds = [ToolKind.RESPOND]

    steps = []
    position: dict[ToolKind, int] = {}
    for index, kind in enumerate(kinds):
        args: dict[str, ValueRef] = {}
        if kind is ToolKind.IMAGE_SEARCH:
            args["image"] = ValueRef.input_image()
        elif kind is ToolKind.TEXT_SEARCH:
            if ToolKind.REQUERY in position and rng.random() < 0.5:
                args["query"] = ValueRef.step_output(position[ToolKind.REQUERY])
            else:
                args["query"] = ValueRef.literal(
                    " ".join(rng.choice(["paris", "weather", "today", "price"])
                             for _ in range(rng.randint(1, 3)))
                )
        elif kind is ToolKind.REQUERY:
            args["image"] = ValueRef.input_image()
            args["question"] = ValueRef.input_question()
            if ToolKind.IMAGE_SEARCH in position and rng.random() < 0.5:
                args["context"] = ValueRef.step_output(position[ToolKind.IMAGE_SEARCH])
        else:
            args["image"] = ValueRef.input_image()
            args["question"] = ValueRef.input_question()
            if ToolKind.IMAGE_SEARCH in position and rng.random() < 0.5:
                args["image_search"] = ValueRef.step_output(
                    position[ToolKind.IMAGE_SEARCH]
                )
            if ToolKind.TEXT_SEARCH in position and rng.random() < 0.5:
                args["text_search"] = ValueRef.step_output(
                    position[ToolKind.TEXT_SEARCH]
                )
        # defect injection
        roll = rng.random()
        if roll < 0.10 and args:
            args.pop(rng.choice(sorted(args)))
        elif roll < 0.18:
            args["bogus"] = ValueRef.literal("junk")
        elif roll < 0.26:
            args[rng.choice(sorted(args) if args else ["query"])] = (
                ValueRef.step_output(index + rng.randint(0, 2))
            )
        elif roll < 0.32 and kind in (ToolKind.REQUERY, ToolKind.RESPOND):
            slot = "context" if kind is ToolKind.REQUERY else "text_search"
            args[slot] = ValueRef.literal("not snippets")
        steps.append(PlanStep(index, kind, args))
        position[kind] = index
    return Plan(steps=tuple(steps))


def random_pair_set(rng: random.Random, max_pairs: int = 12) -> list[PlanPair]:
    n = rng.randint(1, max_pairs)
    pairs = []
    for i in range(n):
        gold = ARCHETYPE_PLANS[rng.randint(1, 4)]()
        predicted = _random_plan(rng)
        pairs.append(PlanPair(instance_id=f"p{i}", predicted=predicted, gold=gold))
    return pairs
