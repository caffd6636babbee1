"""Planning strategies: one-pass planner plus replay, static, and iterative references."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Protocol

from .dataset import BenchmarkInstance
from .errors import (
    MissingGoldPlan,
    ParseError,
    PlannerFailure,
    PlanUnparseable,
    ToolFailure,
)
from .plan import (
    PROFILE_STRICT,
    Plan,
    PlanStep,
    ToolKind,
    ValueRef,
    parse_plan_text,
    serialize_plan,
    validate_plan,
)
from .toolkit import CallCounters, ToolRegistry, load_template

FALLBACK_RESPOND_ONLY = "respond-only"
FALLBACK_ERROR = "error"

MODE_FEWSHOT = "fewshot"
MODE_SFT = "sft"


@dataclass(frozen=True)
class PlannerConfig:
    mode: str = MODE_FEWSHOT
    max_repair_attempts: int = 2
    fallback: str = FALLBACK_RESPOND_ONLY

    def __post_init__(self):
        if self.mode not in (MODE_FEWSHOT, MODE_SFT):
            raise ValueError(f"unknown planner mode {self.mode!r}")
        if self.max_repair_attempts < 0:
            raise ValueError("max_repair_attempts must be >= 0")
        if self.fallback not in (FALLBACK_RESPOND_ONLY, FALLBACK_ERROR):
            raise ValueError(f"unknown fallback {self.fallback!r}")


class PlannerBackend(Protocol):
    def complete(self, prompt: str, image: str | None = None) -> str: ...


def respond_only_plan() -> Plan:
    return Plan(
        steps=(
            PlanStep(
                index=0,
                tool=ToolKind.RESPOND,
                args={
                    "image": ValueRef.input_image(),
                    "question": ValueRef.input_question(),
                },
            ),
        )
    )


def build_planner_prompt(instance: BenchmarkInstance, mode: str) -> str:
    """Deterministic planner prompt; fewshot embeds one worked example per
    question type, sft carries the task instruction only."""
    template = "planner_fewshot.j2" if mode == MODE_FEWSHOT else "planner_sft.j2"
    return load_template(template).render(question=instance.question).strip()


_REPAIR_SUFFIX = (
    "\n\nYour previous reply could not be used ({reason}). "
    "Reply again with exactly one valid JSON plan object and nothing else."
)


def plan_one_pass(
    instance: BenchmarkInstance,
    config: PlannerConfig,
    backend: PlannerBackend,
    counters: CallCounters,
) -> Plan:
    """Ask the planner endpoint for a complete plan in one call.

    Unusable output triggers bounded repair re-prompts; each attempt costs one
    planner call. On exhaustion, fall back to a respond-only plan or raise,
    per config.
    """
    base_prompt = build_planner_prompt(instance, config.mode)
    reason = ""
    for attempt in range(config.max_repair_attempts + 1):
        prompt = base_prompt if attempt == 0 else base_prompt + _REPAIR_SUFFIX.format(
            reason=reason
        )
        counters.planner_calls += 1
        try:
            text = backend.complete(prompt, image=instance.image)
        except Exception as exc:
            raise PlannerFailure(f"planner endpoint failed: {exc}") from exc
        try:
            plan = parse_plan_text(text)
        except ParseError as exc:
            reason = str(exc)
            continue
        report = validate_plan(plan, profile=PROFILE_STRICT)
        if report.valid:
            return plan
        reason = "invalid plan: " + ", ".join(sorted(report.codes()))
    if config.fallback == FALLBACK_RESPOND_ONLY:
        return respond_only_plan()
    raise PlanUnparseable(f"no usable plan after retries ({reason})")


class MockPlannerBackend:
    """Offline planner: answers with the gold plan for known images, else a
    respond-only plan. Keyed on the image ref, like the other mocks."""

    def __init__(self, plans_by_image: dict[str, Plan] | None = None):
        self.plans_by_image = dict(plans_by_image or {})

    @classmethod
    def from_instances(cls, instances) -> "MockPlannerBackend":
        return cls(
            {i.image: i.gold_plan for i in instances if i.gold_plan is not None}
        )

    def complete(self, prompt: str, image: str | None = None) -> str:
        plan = self.plans_by_image.get(image or "")
        if plan is None:
            plan = respond_only_plan()
        return serialize_plan(plan)


def plan_replay(instance: BenchmarkInstance) -> Plan:
    """Return the gold plan unchanged; costs no planner call."""
    if instance.gold_plan is None:
        raise MissingGoldPlan(f"instance {instance.id} has no gold plan")
    return instance.gold_plan


_STATIC_PLAN = Plan(
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
        PlanStep(
            3,
            ToolKind.RERANK,
            {"question": ValueRef.input_question(), "snippets": ValueRef.step_output(2)},
        ),
        PlanStep(
            4,
            ToolKind.RESPOND,
            {
                "image": ValueRef.input_image(),
                "question": ValueRef.input_question(),
                "image_search": ValueRef.step_output(0),
                "text_search": ValueRef.step_output(3),
            },
        ),
    )
)


def plan_static(instance: BenchmarkInstance) -> Plan:
    """The fixed always-search pipeline: image search, requery, text search,
    rerank, respond -- identical for every instance."""
    return _STATIC_PLAN


# --- iterative reference planner ---------------------------------------------

ACTION_SEARCH = "search"
ACTION_ANSWER = "answer"


@dataclass(frozen=True)
class PolicyAction:
    op: str
    tool: ToolKind | None = None
    query: str | None = None
    text: str | None = None

    @classmethod
    def search(cls, tool: ToolKind, query: str | None = None) -> "PolicyAction":
        if tool not in (ToolKind.IMAGE_SEARCH, ToolKind.TEXT_SEARCH):
            raise ValueError("iterative rounds may only invoke search tools")
        return cls(op=ACTION_SEARCH, tool=tool, query=query)

    @classmethod
    def answer(cls, text: str | None = None) -> "PolicyAction":
        return cls(op=ACTION_ANSWER, text=text)


@dataclass(frozen=True)
class RoundRecord:
    tool: ToolKind
    key: str
    ok: bool
    digest_text: str | None = None


@dataclass(frozen=True)
class LoopState:
    round_index: int
    instance: BenchmarkInstance
    history: tuple[RoundRecord, ...]


StepPolicy = Callable[[LoopState], PolicyAction]


def fixed_search_policy(kinds: list[ToolKind]) -> StepPolicy:
    """Search the listed kinds in order, one per round, then answer."""

    def policy(state: LoopState) -> PolicyAction:
        if state.round_index <= len(kinds):
            return PolicyAction.search(kinds[state.round_index - 1])
        return PolicyAction.answer()

    return policy


def answer_immediately(state: LoopState) -> PolicyAction:
    return PolicyAction.answer()


@dataclass
class IterativeOutcome:
    plan: Plan
    final_answer: str | None
    searches: list[tuple[ToolKind, str, Any]]  # (kind, key, payload or None)
    last_digest_args: dict | None
    degraded: bool
    max_rounds_exceeded: bool


_RESPOND_SLOT = {
    ToolKind.IMAGE_SEARCH: "image_search",
    ToolKind.TEXT_SEARCH: "text_search",
}


def plan_iterative(
    instance: BenchmarkInstance,
    step_policy: StepPolicy,
    max_rounds: int,
    registry: ToolRegistry,
    counters: CallCounters,
) -> IterativeOutcome:
    """Round-by-round planning loop: each round asks the policy for an action;
    a search round retrieves and digests (one search plus one MLLM call), and
    the loop ends when the policy answers -- the final answer is the last
    digest, at no extra call. Hitting max_rounds forces the answer and flags
    the outcome.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    history: list[RoundRecord] = []
    searches: list[tuple[ToolKind, str, Any]] = []
    last_digest: str | None = None
    last_digest_args: dict | None = None
    answer_text: str | None = None
    degraded = False
    forced = False
    rounds = 0

    while True:
        if rounds >= max_rounds:
            forced = True
            break
        rounds += 1
        counters.planner_calls += 1
        action = step_policy(
            LoopState(round_index=rounds, instance=instance, history=tuple(history))
        )
        if action.op == ACTION_ANSWER:
            answer_text = action.text
            break
        kind = action.tool
        assert kind is not None
        if kind is ToolKind.IMAGE_SEARCH:
            args: dict[str, Any] = {"image": instance.image}
            key = instance.image
        else:
            key = action.query or instance.question
            args = {"query": key}
        try:
            result = registry.invoke(kind, args, counters)
            payload: Any = result.payload
        except ToolFailure:
            payload = None
            degraded = True
        searches.append((kind, key, payload))
        if payload is None:
            history.append(RoundRecord(tool=kind, key=key, ok=False))
            continue
        digest_args = {
            "image": instance.image,
            "question": instance.question,
            _RESPOND_SLOT[kind]: payload,
        }
        try:
            digest = registry.invoke(ToolKind.RESPOND, digest_args, counters)
        except ToolFailure:
            degraded = True
            history.append(RoundRecord(tool=kind, key=key, ok=True))
            continue
        last_digest = str(digest.payload)
        last_digest_args = digest_args
        history.append(
            RoundRecord(tool=kind, key=key, ok=True, digest_text=last_digest)
        )

    final_answer = answer_text if answer_text is not None else last_digest
    return IterativeOutcome(
        plan=_materialize(instance, searches),
        final_answer=final_answer,
        searches=searches,
        last_digest_args=last_digest_args,
        degraded=degraded,
        max_rounds_exceeded=forced,
    )


def _materialize(
    instance: BenchmarkInstance, searches: list[tuple[ToolKind, str, Any]]
) -> Plan:
    """Collapse the loop into a linear plan: distinct searches in first-use
    order, then the terminal respond step."""
    steps: list[PlanStep] = []
    index_of: dict[ToolKind, int] = {}
    for kind, key, _payload in searches:
        if kind in index_of:
            continue
        index_of[kind] = len(steps)
        if kind is ToolKind.IMAGE_SEARCH:
            args = {"image": ValueRef.input_image()}
        else:
            args = {"query": ValueRef.literal(key)}
        steps.append(PlanStep(index=len(steps), tool=kind, args=args))
    respond_args: dict[str, ValueRef] = {
        "image": ValueRef.input_image(),
        "question": ValueRef.input_question(),
    }
    for kind, slot in _RESPOND_SLOT.items():
        if kind in index_of:
            respond_args[slot] = ValueRef.step_output(index_of[kind])
    steps.append(PlanStep(index=len(steps), tool=ToolKind.RESPOND, args=respond_args))
    return Plan(steps=tuple(steps))
