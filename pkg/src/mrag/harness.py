"""Run orchestration: strategy dispatch, artifact files, evaluation driver."""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .dataset import BenchmarkInstance
from .errors import MragError
from .evaluation import (
    EvalReport,
    JudgeBackend,
    PlanPair,
    aggregate_report,
    judge_answer,
    render_report_csv,
    render_report_md,
)
from .executor import (
    ExecutionTrace,
    StepRecord,
    digest_obj,
    execute,
    payload_obj,
    result_summary,
    trace_from_obj,
    trace_to_obj,
)
from .planner import (
    MockPlannerBackend,
    PlannerBackend,
    PlannerConfig,
    StepPolicy,
    fixed_search_policy,
    plan_iterative,
    plan_one_pass,
    plan_replay,
    plan_static,
)
from .plan import ToolKind
from .toolkit import CallCounters, ToolRegistry

STRATEGIES = (
    "one-pass-fewshot",
    "one-pass-sft",
    "replay",
    "static",
    "iterative",
)

BACKEND_MODES = ("live", "mock")

MANIFEST_FILE = "manifest"
TRACES_FILE = "traces.jsonl"
ANSWERS_FILE = "answers.jsonl"


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    strategy: str
    backend_mode: str
    out_dir: str
    jobs: int = 1
    verbose_trace: bool = False

    def digest(self) -> str:
        blob = json.dumps(
            {
                "dataset": self.dataset,
                "strategy": self.strategy,
                "backend_mode": self.backend_mode,
                "verbose_trace": self.verbose_trace,
            },
            sort_keys=True,
        ).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    dataset: str
    strategy: str
    backend_mode: str
    started_at: str
    finished_at: str
    config_digest: str

    def to_obj(self) -> dict:
        return {
            "run_id": self.run_id,
            "dataset": self.dataset,
            "strategy": self.strategy,
            "backend_mode": self.backend_mode,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "config_digest": self.config_digest,
        }


def _utcnow() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def make_manifest(config: RunConfig, started_at: str, finished_at: str) -> RunManifest:
    digest = config.digest()
    return RunManifest(
        run_id=f"{config.strategy}-{digest[:12]}",
        dataset=config.dataset,
        strategy=config.strategy,
        backend_mode=config.backend_mode,
        started_at=started_at,
        finished_at=finished_at,
        config_digest=digest,
    )


def _iterative_trace(
    instance: BenchmarkInstance,
    policy: StepPolicy,
    max_rounds: int,
    registry: ToolRegistry,
) -> ExecutionTrace:
    """Trace for the round-by-round strategy. The counters reflect the loop's
    true cost, which intentionally exceeds what the materialized plan's steps
    alone would imply (each search round also spends a digest call)."""

    counters = CallCounters()
    outcome = plan_iterative(instance, policy, max_rounds, registry, counters)
    records: list[StepRecord] = []
    seen: set[ToolKind] = set()
    index = 0
    for kind, key, payload in outcome.searches:
        if kind in seen:
            continue
        seen.add(kind)
        args = {"image": instance.image} if kind is ToolKind.IMAGE_SEARCH else {
            "query": key
        }
        record = StepRecord(step_index=index, args_digest=digest_obj(args))
        if payload is None:
            record.error = f"{kind.value} failed during the planning loop"
        else:
            record.result = result_summary(payload)
        records.append(record)
        index += 1
    respond_args = outcome.last_digest_args or {
        "image": instance.image,
        "question": instance.question,
    }
    respond_record = StepRecord(
        step_index=index,
        args_digest=digest_obj(
            {name: payload_obj(v) for name, v in respond_args.items()}
        ),
    )
    if outcome.final_answer is not None:
        respond_record.result = result_summary(outcome.final_answer)
    else:
        respond_record.error = "no answer produced"
    records.append(respond_record)
    return ExecutionTrace(
        instance_id=instance.id,
        plan=outcome.plan,
        step_records=records,
        final_answer=outcome.final_answer,
        counters=counters,
        degraded=outcome.degraded or outcome.max_rounds_exceeded,
        wall_time_ms=0.0,
    )


def run_instance(
    instance: BenchmarkInstance,
    strategy: str,
    registry: ToolRegistry,
    planner_backend: PlannerBackend | None = None,
    planner_config: PlannerConfig | None = None,
    iterative_policy: StepPolicy | None = None,
    max_rounds: int = 5,
    record_timing: bool = True,
    verbose: bool = False,
) -> ExecutionTrace:
    """Produce one trace for an instance under the given strategy."""
    if strategy == "replay":
        plan = plan_replay(instance)
        counters = CallCounters()
    elif strategy == "static":
        plan = plan_static(instance)
        counters = CallCounters()
    elif strategy in ("one-pass-fewshot", "one-pass-sft"):
        if planner_backend is None:
            raise MragError("one-pass strategies need a planner backend")
        mode = "fewshot" if strategy == "one-pass-fewshot" else "sft"
        config = planner_config or PlannerConfig(mode=mode)
        if config.mode != mode:
            config = PlannerConfig(
                mode=mode,
                max_repair_attempts=config.max_repair_attempts,
                fallback=config.fallback,
            )
        counters = CallCounters()
        plan = plan_one_pass(instance, config, planner_backend, counters)
    elif strategy == "iterative":
        policy = iterative_policy or fixed_search_policy(
            [ToolKind.IMAGE_SEARCH, ToolKind.TEXT_SEARCH]
        )
        return _iterative_trace(instance, policy, max_rounds, registry)
    else:
        raise MragError(f"unknown strategy {strategy!r}")
    return execute(
        plan,
        instance,
        registry,
        counters,
        record_timing=record_timing,
        verbose=verbose,
    )


def execute_run(
    config: RunConfig,
    instances: Sequence[BenchmarkInstance],
    registry: ToolRegistry,
    planner_backend: PlannerBackend | None = None,
) -> tuple[RunManifest, list[ExecutionTrace]]:
    """Run every instance, preserving dataset order in the outputs."""
    if config.strategy not in STRATEGIES:
        raise MragError(f"unknown strategy {config.strategy!r}")
    if config.backend_mode not in BACKEND_MODES:
        raise MragError(f"unknown backend mode {config.backend_mode!r}")
    if config.strategy.startswith("one-pass") and planner_backend is None:
        planner_backend = MockPlannerBackend.from_instances(instances)
    record_timing = config.backend_mode == "live"
    started_at = _utcnow()

    def one(instance: BenchmarkInstance) -> ExecutionTrace:
        return run_instance(
            instance,
            config.strategy,
            registry,
            planner_backend=planner_backend,
            record_timing=record_timing,
            verbose=config.verbose_trace,
        )

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            traces = list(pool.map(one, instances))
    else:
        traces = [one(i) for i in instances]
    return make_manifest(config, started_at, _utcnow()), traces


def write_run_artifacts(
    out_dir: str | Path, manifest: RunManifest, traces: Sequence[ExecutionTrace]
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST_FILE).write_text(
        json.dumps(manifest.to_obj(), indent=2) + "\n", encoding="utf-8"
    )
    with (out / TRACES_FILE).open("w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(json.dumps(trace_to_obj(trace), ensure_ascii=False) + "\n")
    with (out / ANSWERS_FILE).open("w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(
                json.dumps(
                    {"instance_id": trace.instance_id, "answer": trace.final_answer},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_traces(run_dir: str | Path) -> list[ExecutionTrace]:
    path = Path(run_dir) / TRACES_FILE
    traces = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                traces.append(trace_from_obj(json.loads(line)))
    return traces


@dataclass
class EvalOutcome:
    report: EvalReport
    scores: dict[str, float]
    skipped_plan_metrics: bool


def evaluate_run(
    traces: Sequence[ExecutionTrace],
    instances: Sequence[BenchmarkInstance],
    judge: JudgeBackend,
) -> EvalOutcome:
    """Judge answers and score plans for one run.

    Instances without gold answers are not judged; a missing final answer is
    judged as 0. Plan metrics cover instances with gold plans and are skipped
    entirely when none exist.
    """
    by_id = {i.id: i for i in instances}
    scores: dict[str, float] = {}
    pairs: list[PlanPair] = []
    for trace in traces:
        instance = by_id.get(trace.instance_id)
        if instance is None:
            continue
        if instance.gold_answer is not None:
            if trace.final_answer is None:
                scores[instance.id] = 0.0
            else:
                scores[instance.id] = judge_answer(judge, instance, trace.final_answer)
        if instance.gold_plan is not None:
            pairs.append(
                PlanPair(
                    instance_id=instance.id,
                    predicted=trace.plan,
                    gold=instance.gold_plan,
                )
            )
    report = aggregate_report(traces, pairs, scores, instances)
    return EvalOutcome(report=report, scores=scores, skipped_plan_metrics=not pairs)


def write_eval_artifacts(
    run_dir: str | Path, outcome: EvalOutcome
) -> None:
    out = Path(run_dir)
    (out / "report.csv").write_text(render_report_csv(outcome.report), "utf-8")
    (out / "report.md").write_text(render_report_md(outcome.report), "utf-8")
    with (out / "scores.jsonl").open("w", encoding="utf-8") as fh:
        for instance_id, score in outcome.scores.items():
            fh.write(
                json.dumps({"instance_id": instance_id, "score": score}) + "\n"
            )

