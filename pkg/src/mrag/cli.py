"""Command-line entry points: run, eval, stats, correlate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset import dataset_stats, load_instances, load_similarity_matrix
from .errors import ConfigError, DatasetLoadError, MragError
from .evaluation import MockJudgeBackend, ChatJudgeBackend, overall_line, pearson
from .harness import (
    BACKEND_MODES,
    STRATEGIES,
    TRACES_FILE,
    RunConfig,
    evaluate_run,
    execute_run,
    load_traces,
    write_eval_artifacts,
    write_run_artifacts,
)
from .http_backends import (
    ChatCompletionsClient,
    build_live_registry,
    chat_config_from_env,
    planner_client_from_env,
)
from .mocks import build_mock_registry
from .plan import normalize_tool_name

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_DEGRADED = 2


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_FATAL


def cmd_run(args: argparse.Namespace) -> int:
    try:
        instances = load_instances(args.dataset)
    except (OSError, DatasetLoadError) as exc:
        return _fail(f"cannot load dataset {args.dataset}: {exc}")

    config = RunConfig(
        dataset=str(args.dataset),
        strategy=args.strategy,
        backend_mode=args.backend,
        out_dir=str(args.out),
        jobs=args.jobs,
        verbose_trace=args.verbose_trace,
    )
    planner_backend = None
    try:
        if args.backend == "live":
            registry = build_live_registry()
            if config.strategy.startswith("one-pass"):
                planner_backend = planner_client_from_env()
        else:
            fail_kinds = (
                [normalize_tool_name(args.inject_fault)] if args.inject_fault else []
            )
            registry = build_mock_registry(args.fixtures, fail_kinds=fail_kinds)
    except ConfigError as exc:
        return _fail(f"{exc}; set the variables listed or use --backend mock")

    try:
        manifest, traces = execute_run(config, instances, registry, planner_backend)
    except MragError as exc:
        return _fail(str(exc))
    write_run_artifacts(args.out, manifest, traces)
    degraded = sum(t.degraded for t in traces)
    print(
        f"run {manifest.run_id}: {len(traces)} instances, "
        f"{degraded} degraded -> {args.out}"
    )
    return EXIT_DEGRADED if degraded else EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    if not (run_dir / TRACES_FILE).exists():
        return _fail(f"no {TRACES_FILE} in {run_dir}; run the 'run' command first")
    try:
        instances = load_instances(args.dataset)
    except (OSError, DatasetLoadError) as exc:
        return _fail(f"cannot load dataset {args.dataset}: {exc}")
    traces = load_traces(run_dir)
    if args.judge == "live":
        try:
            judge = ChatJudgeBackend(ChatCompletionsClient(chat_config_from_env()))
        except ConfigError as exc:
            return _fail(str(exc))
    else:
        judge = MockJudgeBackend()
    try:
        outcome = evaluate_run(traces, instances, judge)
    except MragError as exc:
        return _fail(str(exc))
    if outcome.skipped_plan_metrics:
        print(
            "warning: dataset has no gold plans; plan metrics skipped",
            file=sys.stderr,
        )
    write_eval_artifacts(run_dir, outcome)
    print(overall_line(outcome.report))
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        instances = load_instances(args.dataset)
    except (OSError, DatasetLoadError) as exc:
        return _fail(f"cannot load dataset {args.dataset}: {exc}")
    similarity = None
    if args.similarity:
        try:
            similarity = load_similarity_matrix(args.similarity)
        except MragError as exc:
            return _fail(str(exc))
    try:
        stats = dataset_stats(instances, similarity)
    except MragError as exc:
        return _fail(str(exc))
    print(f"instances: {stats.n}")
    histogram = " ".join(
        f"{t}:{stats.type_histogram[t]}" for t in (1, 2, 3, 4)
    )
    print(f"types: {histogram}")
    print(f"mean answer tokens: {stats.mean_answer_tokens:.2f}")
    if stats.diversity is not None:
        print(f"diversity: {stats.diversity:.4f}")
    return EXIT_OK


def _load_scores(path: str) -> dict[str, float]:
    """Accepts scores.jsonl lines or a single JSON object mapping id -> score."""
    text = Path(path).read_text("utf-8").strip()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = None
    if isinstance(obj, dict) and "instance_id" not in obj:
        return {str(key): float(value) for key, value in obj.items()}
    scores: dict[str, float] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        record = json.loads(line)
        scores[str(record["instance_id"])] = float(record["score"])
    return scores


def cmd_correlate(args: argparse.Namespace) -> int:
    try:
        scores_a = _load_scores(args.scores_a)
        scores_b = _load_scores(args.scores_b)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(f"cannot read score files: {exc}")
    shared = sorted(set(scores_a) & set(scores_b))
    if len(shared) < 2:
        return _fail(f"need at least 2 overlapping ids, found {len(shared)}")
    r = pearson([scores_a[i] for i in shared], [scores_b[i] for i in shared])
    if r is None:
        return _fail("correlation undefined: a score vector is constant")
    print(f"pearson r = {r:.4f} over {len(shared)} instances")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrag",
        description="Plan, execute, and evaluate one-pass multimodal RAG runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a strategy over a dataset")
    run.add_argument("--dataset", required=True)
    run.add_argument("--strategy", required=True, choices=STRATEGIES)
    run.add_argument("--backend", default="mock", choices=BACKEND_MODES)
    run.add_argument("--out", required=True)
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--verbose-trace", action="store_true")
    run.add_argument(
        "--fixtures", default=None, help="directory of canned search payloads"
    )
    run.add_argument(
        "--inject-fault",
        default=None,
        metavar="TOOL",
        help="(testing) make this tool's mock backend fail",
    )
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="score a finished run")
    ev.add_argument("--run", required=True, help="run output directory")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--judge", default="mock", choices=("mock", "live"))
    ev.set_defaults(func=cmd_eval)

    st = sub.add_parser("stats", help="summarize a dataset")
    st.add_argument("--dataset", required=True)
    st.add_argument("--similarity", default=None)
    st.set_defaults(func=cmd_stats)

    corr = sub.add_parser("correlate", help="Pearson r between two score files")
    corr.add_argument("scores_a")
    corr.add_argument("scores_b")
    corr.set_defaults(func=cmd_correlate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MragError, OSError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
