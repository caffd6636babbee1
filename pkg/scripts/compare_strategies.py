#!/usr/bin/env python3
"""Run every planning strategy over the bundled benchmark with mock backends
and print the per-strategy cost and plan-metric comparison."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from mrag.dataset import load_instances  # noqa: E402
from mrag.evaluation import MockJudgeBackend  # noqa: E402
from mrag.harness import STRATEGIES, RunConfig, evaluate_run, execute_run  # noqa: E402
from mrag.mocks import build_mock_registry  # noqa: E402
from mrag.planner import MockPlannerBackend  # noqa: E402


def fmt(value, width=9):
    if value is None:
        return "-".rjust(width)
    return f"{value:.2f}".rjust(width)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--dataset", default=str(ROOT / "fixtures" / "remplan_mini.jsonl")
    )
    parser.add_argument(
        "--fixtures", default=str(ROOT / "fixtures" / "search_fixtures")
    )
    args = parser.parse_args()

    instances = load_instances(args.dataset)
    registry = build_mock_registry(args.fixtures)
    planner = MockPlannerBackend.from_instances(instances)
    judge = MockJudgeBackend()

    header = (
        f"{'strategy':<18}{'search':>9}{'mllm':>9}{'planner':>9}"
        f"{'plan_acc':>10}{'is_r':>9}{'ts_r':>9}{'ans':>9}"
    )
    print(f"{len(instances)} instances from {args.dataset}")
    print(header)
    print("-" * len(header))
    for strategy in STRATEGIES:
        config = RunConfig(
            dataset=args.dataset, strategy=strategy, backend_mode="mock", out_dir="-"
        )
        _, traces = execute_run(config, instances, registry, planner)
        outcome = evaluate_run(traces, instances, judge)
        report = outcome.report
        print(
            f"{strategy:<18}"
            f"{fmt(report.avg_counts.search)}"
            f"{fmt(report.avg_counts.mllm)}"
            f"{fmt(report.avg_counts.planner)}"
            f"{fmt(report.plan_acc, 10)}"
            f"{fmt(report.is_r)}"
            f"{fmt(report.ts_r)}"
            f"{fmt(report.ans_overall)}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
