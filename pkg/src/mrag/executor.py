"""Plan execution: argument wiring, sequencing, failure degradation, tracing."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from typing import Any, Mapping

from .dataset import BenchmarkInstance
from .errors import ToolFailure, TypeMismatch, WiringError
from .plan import (
    Plan,
    PlanStep,
    RefKind,
    ToolKind,
    ValueRef,
    plan_from_obj,
    plan_to_obj,
)
from .toolkit import (
    DEFAULT_SCHEMAS,
    CallCounters,
    SemanticType,
    Snippet,
    ToolRegistry,
    ToolSchemaSet,
)

Payload = str | tuple[Snippet, ...]


@dataclass
class StepRecord:
    step_index: int
    args_digest: str
    result: dict | None = None
    error: str | None = None
    latency_ms: float = 0.0
    resolved_args: dict | None = None  # populated only for verbose traces


@dataclass
class ExecutionTrace:
    instance_id: str
    plan: Plan
    step_records: list[StepRecord]
    final_answer: str | None
    counters: CallCounters
    degraded: bool
    wall_time_ms: float


def payload_obj(payload: Payload) -> Any:
    if isinstance(payload, str):
        return payload
    return [s.to_obj() for s in payload]


def digest_obj(value: Any) -> str:
    blob = json.dumps(value, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def result_summary(payload: Payload) -> dict:
    if isinstance(payload, str):
        return {"type": "text", "chars": len(payload), "digest": digest_obj(payload)}
    obj = payload_obj(payload)
    return {"type": "snippets", "count": len(payload), "digest": digest_obj(obj)}


def resolve_args(
    step: PlanStep,
    inputs: BenchmarkInstance,
    prior_outputs: Mapping[int, Payload],
    elide: frozenset[str] = frozenset(),
    schemas: ToolSchemaSet = DEFAULT_SCHEMAS,
) -> dict[str, Payload]:
    """Materialize a step's argument map: inputs, prior step outputs, literals.

    Raises WiringError when a step reference has no recorded output and
    TypeMismatch when a payload does not fit the slot's semantic type.
    """
    schema = schemas[step.tool]
    resolved: dict[str, Payload] = {}
    for name, ref in step.args.items():
        if name in elide:
            continue
        if ref.kind is RefKind.INPUT_IMAGE:
            value: Payload = inputs.image
        elif ref.kind is RefKind.INPUT_QUESTION:
            value = inputs.question
        elif ref.kind is RefKind.LITERAL:
            value = ref.text or ""
        else:
            if ref.step not in prior_outputs:
                raise WiringError(
                    f"step {step.index}: argument {name!r} references step "
                    f"{ref.step}, which has no output"
                )
            value = prior_outputs[ref.step]
        spec = schema.arg(name)
        if spec is not None:
            wants_snippets = spec.semantic is SemanticType.SNIPPETS
            if wants_snippets and isinstance(value, str):
                raise TypeMismatch(
                    f"step {step.index}: argument {name!r} needs snippets"
                )
            if not wants_snippets and not isinstance(value, str):
                raise TypeMismatch(
                    f"step {step.index}: argument {name!r} needs text"
                )
        resolved[name] = value
    return resolved


@dataclass(frozen=True)
class StepDecision:
    run: bool
    elide: frozenset[str] = frozenset()


def apply_failure_policy(
    plan: Plan,
    unavailable: frozenset[int],
    schemas: ToolSchemaSet = DEFAULT_SCHEMAS,
) -> dict[int, StepDecision]:
    """Continuation decisions once the steps in `unavailable` have no output.

    A step whose required argument depends on an unavailable step is skipped
    (and becomes unavailable itself); optional arguments are merely elided.
    Respond always runs, dropping whatever failed.
    """
    dead = set(unavailable)
    decisions: dict[int, StepDecision] = {}
    for step in plan.steps:
        if step.index in dead:
            decisions[step.index] = StepDecision(run=True)
            continue
        schema = schemas[step.tool]
        elided = set()
        doomed = False
        for name, ref in step.args.items():
            if ref.kind is not RefKind.STEP_OUTPUT or ref.step not in dead:
                continue
            spec = schema.arg(name)
            required = spec.required if spec is not None else True
            if required and step.tool is not ToolKind.RESPOND:
                doomed = True
            else:
                elided.add(name)
        if doomed:
            dead.add(step.index)
            decisions[step.index] = StepDecision(run=False)
        else:
            decisions[step.index] = StepDecision(run=True, elide=frozenset(elided))
    return decisions


def execute(
    plan: Plan,
    instance: BenchmarkInstance,
    registry: ToolRegistry,
    counters: CallCounters | None = None,
    record_timing: bool = True,
    verbose: bool = False,
) -> ExecutionTrace:
    """Run a validated plan against the registry, strictly in step order.

    Tool failures never raise: downstream dependents are skipped or run with
    elided arguments, and the trace is flagged degraded.
    """
    counters = counters if counters is not None else CallCounters()
    schemas = registry.schemas
    prior: dict[int, Payload] = {}
    unavailable: set[int] = set()
    records: list[StepRecord] = []
    final_answer: str | None = None
    degraded = False
    started = time.perf_counter()

    for step in plan.steps:
        decisions = apply_failure_policy(plan, frozenset(unavailable), schemas)
        decision = decisions[step.index]
        if not decision.run:
            continue
        resolved = resolve_args(step, instance, prior, decision.elide, schemas)
        digest = digest_obj(
            {name: payload_obj(value) for name, value in resolved.items()}
        )
        record = StepRecord(step_index=step.index, args_digest=digest)
        if verbose:
            record.resolved_args = {
                name: payload_obj(value) for name, value in resolved.items()
            }
        step_started = time.perf_counter()
        try:
            result = registry.invoke(step.tool, resolved, counters)
        except ToolFailure as exc:
            record.error = str(exc)
            record.latency_ms = (
                (time.perf_counter() - step_started) * 1000.0 if record_timing else 0.0
            )
            records.append(record)
            unavailable.add(step.index)
            degraded = True
            continue
        prior[step.index] = result.payload
        record.result = result_summary(result.payload)
        if verbose:
            record.result["payload"] = payload_obj(result.payload)
        record.latency_ms = result.latency_ms if record_timing else 0.0
        records.append(record)
        if step.tool is ToolKind.RESPOND and isinstance(result.payload, str):
            final_answer = result.payload

    wall = (time.perf_counter() - started) * 1000.0 if record_timing else 0.0
    return ExecutionTrace(
        instance_id=instance.id,
        plan=plan,
        step_records=records,
        final_answer=final_answer,
        counters=counters,
        degraded=degraded,
        wall_time_ms=wall,
    )


def derive_implicit_plan(trace: ExecutionTrace) -> Plan:
    """Plan actually carried out: the attempted steps, reindexed and rewired.

    Lets strategies without a meaningful declared plan be scored on the tools
    they in fact invoked.
    """
    attempted = [r.step_index for r in trace.step_records]
    remap = {old: new for new, old in enumerate(attempted)}
    steps = []
    for old_index in attempted:
        step = trace.plan.steps[old_index]
        args = {}
        for name, ref in step.args.items():
            if ref.kind is RefKind.STEP_OUTPUT:
                if ref.step not in remap:
                    continue  # pointed at a skipped step; drop the wire
                ref = ValueRef.step_output(remap[ref.step])
            args[name] = ref
        steps.append(PlanStep(index=remap[old_index], tool=step.tool, args=args))
    return Plan(steps=tuple(steps))


# --- trace (de)serialization ------------------------------------------------


def trace_to_obj(trace: ExecutionTrace) -> dict:
    records = []
    for r in trace.step_records:
        obj: dict[str, Any] = {
            "step_index": r.step_index,
            "args_digest": r.args_digest,
            "result": r.result,
            "error": r.error,
            "latency_ms": r.latency_ms,
        }
        if r.resolved_args is not None:
            obj["resolved_args"] = r.resolved_args
        records.append(obj)
    return {
        "instance_id": trace.instance_id,
        "plan": plan_to_obj(trace.plan),
        "step_records": records,
        "final_answer": trace.final_answer,
        "counters": trace.counters.to_obj(),
        "degraded": trace.degraded,
        "wall_time_ms": trace.wall_time_ms,
    }


def trace_from_obj(obj: Mapping[str, Any]) -> ExecutionTrace:
    records = [
        StepRecord(
            step_index=r["step_index"],
            args_digest=r["args_digest"],
            result=r.get("result"),
            error=r.get("error"),
            latency_ms=r.get("latency_ms", 0.0),
            resolved_args=r.get("resolved_args"),
        )
        for r in obj.get("step_records", [])
    ]
    return ExecutionTrace(
        instance_id=obj["instance_id"],
        plan=plan_from_obj(obj["plan"]),
        step_records=records,
        final_answer=obj.get("final_answer"),
        counters=CallCounters.from_obj(obj.get("counters", {})),
        degraded=bool(obj.get("degraded", False)),
        wall_time_ms=float(obj.get("wall_time_ms", 0.0)),
    )
