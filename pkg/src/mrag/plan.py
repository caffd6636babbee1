"""Plan intermediate representation: grammar, parsing, validation, serialization.

A plan is a flat, ordered list of tool invocations with named arguments.
Argument values are references: the input image, the input question, the
output of an earlier step, or a literal string. The wire format is a single
JSON object ``{"steps": [{"tool": ..., "args": {...}}, ...]}``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any, Iterable, Mapping

from .errors import InvalidPlan, ParseError, UnknownProfile, UnknownTool

if TYPE_CHECKING:
    from .toolkit import ToolSchemaSet


class ToolKind(Enum):
    """The five tools a plan step may invoke."""

    IMAGE_SEARCH = "image_search"
    TEXT_SEARCH = "text_search"
    REQUERY = "requery"
    RESPOND = "respond"
    RERANK = "rerank"


#: Wire-name aliases accepted by the parser, keyed by the normalized form
#: (lowercased, spaces/hyphens folded to underscores). Names not listed here
#: are rejected rather than guessed.
TOOL_ALIASES: dict[str, ToolKind] = {
    "image_search": ToolKind.IMAGE_SEARCH,
    "imagesearch": ToolKind.IMAGE_SEARCH,
    "text_search": ToolKind.TEXT_SEARCH,
    "textsearch": ToolKind.TEXT_SEARCH,
    "requery": ToolKind.REQUERY,
    "re_query": ToolKind.REQUERY,
    "respond": ToolKind.RESPOND,
    "response": ToolKind.RESPOND,
    "rerank": ToolKind.RERANK,
    "re_rank": ToolKind.RERANK,
}

#: Canonical argument order used by serialize_plan. Must agree with the
#: declared order in toolkit.DEFAULT_SCHEMAS (asserted by a unit test).
CANONICAL_ARG_ORDER: dict[ToolKind, tuple[str, ...]] = {
    ToolKind.IMAGE_SEARCH: ("image",),
    ToolKind.TEXT_SEARCH: ("query",),
    ToolKind.REQUERY: ("image", "question", "context"),
    ToolKind.RESPOND: ("image", "question", "image_search", "text_search"),
    ToolKind.RERANK: ("question", "snippets"),
}

PROFILE_STRICT = "remplan-strict"
PROFILE_LENIENT = "lenient"
PROFILES = (PROFILE_STRICT, PROFILE_LENIENT)

# Violation codes emitted by validate_plan.
EMPTY_PLAN = "EMPTY_PLAN"
BAD_STEP_INDEX = "BAD_STEP_INDEX"
RESPOND_MISSING = "RESPOND_MISSING"
RESPOND_NOT_LAST = "RESPOND_NOT_LAST"
TOOL_REPEATED = "TOOL_REPEATED"
RERANK_FORBIDDEN = "RERANK_FORBIDDEN"
ORDER_VIOLATION = "ORDER_VIOLATION"
BAD_QUERY_SOURCE = "BAD_QUERY_SOURCE"
DANGLING_REF = "DANGLING_REF"
MISSING_ARG = "MISSING_ARG"
UNEXPECTED_ARG = "UNEXPECTED_ARG"
TYPE_MISMATCH = "TYPE_MISMATCH"

#: Codes that concern step parameters rather than plan structure; the
#: parameter-validity metric counts exactly these.
PARAM_VIOLATIONS = frozenset(
    {MISSING_ARG, UNEXPECTED_ARG, DANGLING_REF, TYPE_MISMATCH}
)

# Checks skipped by the lenient profile.
_STRICT_ONLY = frozenset({ORDER_VIOLATION, RERANK_FORBIDDEN, BAD_QUERY_SOURCE})


class RefKind(Enum):
    INPUT_IMAGE = "input_image"
    INPUT_QUESTION = "input_question"
    STEP_OUTPUT = "step_output"
    LITERAL = "literal"


_REF_IMAGE = "$input.image"
_REF_QUESTION = "$input.question"
_STEP_REF_RE = re.compile(r"^\$step\.(\d+)$")


@dataclass(frozen=True)
class ValueRef:
    """An argument value: an input slot, an earlier step's output, or a literal.

    Literal text that itself matches the reference grammar (``$input.image``,
    ``$input.question``, ``$step.N``) is unrepresentable; such strings always
    parse as references.
    """

    kind: RefKind
    step: int | None = None
    text: str | None = None

    def __post_init__(self):
        if self.kind is RefKind.STEP_OUTPUT and (self.step is None or self.step < 0):
            raise ValueError("step output reference needs a non-negative index")
        if self.kind is RefKind.LITERAL and self.text is None:
            raise ValueError("literal reference needs text")

    @classmethod
    def input_image(cls) -> "ValueRef":
        return cls(RefKind.INPUT_IMAGE)

    @classmethod
    def input_question(cls) -> "ValueRef":
        return cls(RefKind.INPUT_QUESTION)

    @classmethod
    def step_output(cls, step: int) -> "ValueRef":
        return cls(RefKind.STEP_OUTPUT, step=step)

    @classmethod
    def literal(cls, text: str) -> "ValueRef":
        return cls(RefKind.LITERAL, text=text)

    @property
    def is_literal(self) -> bool:
        return self.kind is RefKind.LITERAL


def parse_value_ref(raw: str) -> ValueRef:
    """Parse one argument value string into a ValueRef."""
    if raw == _REF_IMAGE:
        return ValueRef.input_image()
    if raw == _REF_QUESTION:
        return ValueRef.input_question()
    m = _STEP_REF_RE.match(raw)
    if m:
        return ValueRef.step_output(int(m.group(1)))
    return ValueRef.literal(raw)


def format_value_ref(ref: ValueRef) -> str:
    if ref.kind is RefKind.INPUT_IMAGE:
        return _REF_IMAGE
    if ref.kind is RefKind.INPUT_QUESTION:
        return _REF_QUESTION
    if ref.kind is RefKind.STEP_OUTPUT:
        return f"$step.{ref.step}"
    return ref.text  # type: ignore[return-value]


@dataclass(frozen=True)
class PlanStep:
    index: int
    tool: ToolKind
    args: dict[str, ValueRef]


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class Violation:
    code: str
    step_index: int | None
    message: str


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    profile: str
    violations: tuple[Violation, ...]

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}


def normalize_tool_name(name: str) -> ToolKind:
    """Resolve a tool-name alias; unknown names are errors, not guesses."""
    key = re.sub(r"[\s\-]+", "_", name.strip().lower())
    try:
        return TOOL_ALIASES[key]
    except KeyError:
        raise UnknownTool(name) from None


def plan_from_obj(obj: Mapping[str, Any]) -> Plan:
    """Build a Plan from a decoded plan object, assigning sequential indices."""
    raw_steps = obj.get("steps")
    if not isinstance(raw_steps, list):
        raise ParseError("plan object has no 'steps' list")
    steps = []
    for i, raw in enumerate(raw_steps):
        if not isinstance(raw, dict):
            raise ParseError(f"malformed step {i}: not an object")
        tool_name = raw.get("tool")
        if not isinstance(tool_name, str):
            raise ParseError(f"malformed step {i}: missing tool name")
        tool = normalize_tool_name(tool_name)
        raw_args = raw.get("args", {})
        if not isinstance(raw_args, dict):
            raise ParseError(f"malformed step {i}: args is not an object")
        args: dict[str, ValueRef] = {}
        for name, value in raw_args.items():
            if not isinstance(value, str):
                raise ParseError(
                    f"malformed step {i}: argument {name!r} is not a string"
                )
            args[name] = parse_value_ref(value)
        steps.append(PlanStep(index=i, tool=tool, args=args))
    return Plan(steps=tuple(steps))


def _iter_json_objects(text: str) -> Iterable[dict]:
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            value, _ = decoder.raw_decode(text, idx)
        except json.JSONDecodeError:
            value = None
        if isinstance(value, dict):
            yield value
        idx = text.find("{", idx + 1)


def parse_plan_text(text: str) -> Plan:
    """Extract the first complete plan object from arbitrary model output.

    Prose, code fences, and unrelated JSON around the plan are ignored; the
    first decodable object carrying a ``steps`` list wins.
    """
    for obj in _iter_json_objects(text):
        if isinstance(obj.get("steps"), list):
            return plan_from_obj(obj)
    raise ParseError("no plan block found")


def plan_to_obj(plan: Plan) -> dict:
    """Canonical object form: schema-declared argument order, stable ref syntax."""
    steps = []
    for step in plan.steps:
        canonical = CANONICAL_ARG_ORDER.get(step.tool, ())
        ordered = [n for n in canonical if n in step.args]
        ordered += sorted(n for n in step.args if n not in canonical)
        steps.append(
            {
                "tool": step.tool.value,
                "args": {n: format_value_ref(step.args[n]) for n in ordered},
            }
        )
    return {"steps": steps}


def serialize_plan(plan: Plan) -> str:
    """Canonical textual form; parse_plan_text(serialize_plan(p)) == p."""
    return json.dumps(plan_to_obj(plan), separators=(",", ":"), ensure_ascii=False)


def tool_usage(plan: Plan) -> frozenset[ToolKind]:
    """Distinct tool kinds appearing in the plan."""
    return frozenset(step.tool for step in plan.steps)


_SEARCH_KINDS = frozenset({ToolKind.IMAGE_SEARCH, ToolKind.TEXT_SEARCH})

_ARCHETYPES = {
    frozenset(): 1,
    frozenset({ToolKind.IMAGE_SEARCH}): 2,
    frozenset({ToolKind.TEXT_SEARCH}): 3,
    frozenset({ToolKind.IMAGE_SEARCH, ToolKind.TEXT_SEARCH}): 4,
}


def archetype_of(plan: Plan, schemas: "ToolSchemaSet | None" = None) -> int:
    """Question type (1..4) implied by which search tools the plan uses."""
    report = validate_plan(plan, schemas, PROFILE_STRICT)
    if not report.valid:
        raise InvalidPlan(
            "archetype is defined for strictly valid plans only; violations: "
            + ", ".join(sorted(report.codes()))
        )
    return _ARCHETYPES[frozenset(tool_usage(plan) & _SEARCH_KINDS)]


def _ref_semantic(ref: ValueRef, plan: Plan, schemas: "ToolSchemaSet"):
    """Semantic type a reference produces, or None when it cannot be told
    statically (literals, dangling refs)."""
    from .toolkit import SemanticType

    if ref.kind is RefKind.INPUT_IMAGE:
        return SemanticType.IMAGE_REF
    if ref.kind is RefKind.INPUT_QUESTION:
        return SemanticType.TEXT
    if ref.kind is RefKind.STEP_OUTPUT:
        if ref.step is not None and 0 <= ref.step < len(plan.steps):
            return schemas[plan.steps[ref.step].tool].output
    return None


def _check_step_args(step: PlanStep, plan: Plan, schemas, out: list[Violation]):
    from .toolkit import SemanticType

    schema = schemas[step.tool]
    declared = {a.name for a in schema.args}
    for arg in schema.args:
        if arg.required and arg.name not in step.args:
            out.append(
                Violation(MISSING_ARG, step.index, f"missing argument {arg.name!r}")
            )
    for name in step.args:
        if name not in declared:
            out.append(
                Violation(UNEXPECTED_ARG, step.index, f"unexpected argument {name!r}")
            )
    for name, ref in step.args.items():
        spec = schema.arg(name)
        if spec is None:
            continue
        if ref.kind is RefKind.STEP_OUTPUT and (
            ref.step is None or ref.step >= step.index
        ):
            out.append(
                Violation(
                    DANGLING_REF,
                    step.index,
                    f"argument {name!r} references step {ref.step}, which is not "
                    "an earlier step",
                )
            )
            continue
        produced = _ref_semantic(ref, plan, schemas)
        if ref.is_literal:
            # A literal is an opaque string: fine for text and image slots,
            # never for snippet slots.
            if spec.semantic is SemanticType.SNIPPETS:
                out.append(
                    Violation(
                        TYPE_MISMATCH,
                        step.index,
                        f"argument {name!r} needs snippets, got a literal",
                    )
                )
        elif produced is not None and produced is not spec.semantic:
            out.append(
                Violation(
                    TYPE_MISMATCH,
                    step.index,
                    f"argument {name!r} needs {spec.semantic.value}, "
                    f"got {produced.value}",
                )
            )


def _check_strict_rules(plan: Plan, out: list[Violation]):
    order = (
        ToolKind.IMAGE_SEARCH,
        ToolKind.REQUERY,
        ToolKind.TEXT_SEARCH,
        ToolKind.RESPOND,
    )
    positions = {}
    for step in plan.steps:
        positions.setdefault(step.tool, step.index)
        if step.tool is ToolKind.RERANK:
            out.append(
                Violation(RERANK_FORBIDDEN, step.index, "rerank is not allowed")
            )
    present = [k for k in order if k in positions]
    for earlier, later in zip(present, present[1:]):
        if positions[earlier] > positions[later]:
            out.append(
                Violation(
                    ORDER_VIOLATION,
                    positions[later],
                    f"{later.value} must come after {earlier.value}",
                )
            )
    for step in plan.steps:
        if step.tool is not ToolKind.TEXT_SEARCH:
            continue
        query = step.args.get("query")
        if query is None or query.is_literal:
            continue
        ok = (
            query.kind is RefKind.STEP_OUTPUT
            and query.step is not None
            and 0 <= query.step < len(plan.steps)
            and plan.steps[query.step].tool is ToolKind.REQUERY
        )
        if not ok:
            out.append(
                Violation(
                    BAD_QUERY_SOURCE,
                    step.index,
                    "text search query must be a requery output or a literal",
                )
            )


def validate_plan(
    plan: Plan, schemas: "ToolSchemaSet | None" = None, profile: str = PROFILE_STRICT
) -> ValidationReport:
    """Check every plan invariant under the given profile.

    Violations are reported, never raised. The lenient profile skips only the
    tool-ordering, rerank, and query-source restrictions.
    """
    if profile not in PROFILES:
        raise UnknownProfile(profile)
    if schemas is None:
        from .toolkit import DEFAULT_SCHEMAS

        schemas = DEFAULT_SCHEMAS

    found: list[Violation] = []
    if not plan.steps:
        found.append(Violation(EMPTY_PLAN, None, "plan has no steps"))
    for pos, step in enumerate(plan.steps):
        if step.index != pos:
            found.append(
                Violation(
                    BAD_STEP_INDEX,
                    step.index,
                    f"step at position {pos} carries index {step.index}",
                )
            )

    responds = [s for s in plan.steps if s.tool is ToolKind.RESPOND]
    if plan.steps and not responds:
        found.append(Violation(RESPOND_MISSING, None, "plan has no respond step"))
    for s in responds:
        if s is not plan.steps[-1]:
            found.append(
                Violation(RESPOND_NOT_LAST, s.index, "respond must be the last step")
            )

    once_only = (
        ToolKind.IMAGE_SEARCH,
        ToolKind.TEXT_SEARCH,
        ToolKind.REQUERY,
        ToolKind.RESPOND,
    )
    for kind in once_only:
        hits = [s for s in plan.steps if s.tool is kind]
        for extra in hits[1:]:
            found.append(
                Violation(
                    TOOL_REPEATED,
                    extra.index,
                    f"{kind.value} may appear at most once",
                )
            )

    for step in plan.steps:
        _check_step_args(step, plan, schemas, found)

    _check_strict_rules(plan, found)

    if profile == PROFILE_LENIENT:
        found = [v for v in found if v.code not in _STRICT_ONLY]

    # At most one violation per (code, step) pair.
    seen: set[tuple[str, int | None]] = set()
    unique = []
    for v in found:
        key = (v.code, v.step_index)
        if key not in seen:
            seen.add(key)
            unique.append(v)

    return ValidationReport(
        valid=not unique, profile=profile, violations=tuple(unique)
    )
