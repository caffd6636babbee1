"""Plan metrics, answer judging, correlation, and report aggregation."""

from __future__ import annotations

import logging
import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol, Sequence

from .dataset import BenchmarkInstance
from .errors import (
    EmptyInput,
    JudgeFailure,
    KeyMismatch,
    LengthMismatch,
    ScoreUnparseable,
)
from .executor import ExecutionTrace
from .plan import (
    PARAM_VIOLATIONS,
    PROFILE_LENIENT,
    Plan,
    ToolKind,
    validate_plan,
)
from .toolkit import DEFAULT_SCHEMAS, SemanticType, ToolSchemaSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlanPair:
    instance_id: str
    predicted: Plan
    gold: Plan


# --- tool-level precision / recall -----------------------------------------


def tool_pr(
    pairs: Sequence[PlanPair], kind: ToolKind
) -> tuple[float | None, float | None]:
    """Micro-averaged precision/recall of invoking `kind`, treating each
    instance as a binary decision. Zero denominators yield None."""
    if kind not in (ToolKind.IMAGE_SEARCH, ToolKind.TEXT_SEARCH):
        raise ValueError("tool precision/recall is defined for search tools")
    if not pairs:
        raise EmptyInput("no plan pairs")
    tp = fp = fn = 0
    for pair in pairs:
        predicted = any(s.tool is kind for s in pair.predicted.steps)
        gold = any(s.tool is kind for s in pair.gold.steps)
        if predicted and gold:
            tp += 1
        elif predicted:
            fp += 1
        elif gold:
            fn += 1
    precision = tp / (tp + fp) if (tp + fp) else None
    recall = tp / (tp + fn) if (tp + fn) else None
    return precision, recall


def plan_accuracy(pairs: Sequence[PlanPair]) -> float:
    """Fraction of instances whose predicted tool sequence matches gold
    exactly, order-sensitive; arguments are scored by the parameter metrics."""
    if not pairs:
        raise EmptyInput("no plan pairs")
    hits = sum(
        1
        for pair in pairs
        if [s.tool for s in pair.predicted.steps] == [s.tool for s in pair.gold.steps]
    )
    return hits / len(pairs)


def param_valid(plan: Plan, schemas: ToolSchemaSet = DEFAULT_SCHEMAS) -> bool:
    """Gold-independent structural validity of a plan's parameters: schema
    conformance, resolvable references, mandatory slots filled."""
    report = validate_plan(plan, schemas, PROFILE_LENIENT)
    return not (report.codes() & PARAM_VIOLATIONS)


def param_accuracy(
    pairs: Sequence[PlanPair], schemas: ToolSchemaSet = DEFAULT_SCHEMAS
) -> float:
    if not pairs:
        raise EmptyInput("no plan pairs")
    return sum(param_valid(p.predicted, schemas) for p in pairs) / len(pairs)


# --- parameter semantic similarity -----------------------------------------


def token_f1(a: str, b: str) -> float:
    """Multiset token overlap F1 over lowercased whitespace tokens."""
    ta, tb = a.lower().split(), b.lower().split()
    if not ta and not tb:
        return 1.0
    overlap = sum((Counter(ta) & Counter(tb)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(ta)
    recall = overlap / len(tb)
    return 2 * precision * recall / (precision + recall)


class EmbedderBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> Sequence[Sequence[float]]: ...


def _cosine(u: Sequence[float], v: Sequence[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


def _make_sim_fn(embedder: EmbedderBackend | None) -> Callable[[str, str], float]:
    if embedder is None:
        return token_f1
    state = {"broken": False}

    def sim(a: str, b: str) -> float:
        if not state["broken"]:
            try:
                ua, ub = embedder.embed([a, b])
                return _cosine(ua, ub)
            except Exception as exc:
                state["broken"] = True
                log.warning("embedder failed (%s); falling back to token F1", exc)
        return token_f1(a, b)

    return sim


def _text_literal_args(kind: ToolKind, schemas: ToolSchemaSet) -> tuple[str, ...]:
    return tuple(
        a.name for a in schemas[kind].args if a.semantic is SemanticType.TEXT
    )


def param_similarity(
    pairs: Sequence[PlanPair],
    embedder: EmbedderBackend | None = None,
    schemas: ToolSchemaSet = DEFAULT_SCHEMAS,
) -> float:
    """Semantic agreement of natural-language arguments with gold.

    Steps align by tool kind; a step present on only one side contributes 0.
    Aligned steps compare each text-slot literal (cosine under the embedder,
    token F1 otherwise). Instances with nothing to compare contribute 1.0.
    """
    if not pairs:
        raise EmptyInput("no plan pairs")
    sim = _make_sim_fn(embedder)
    total = 0.0
    for pair in pairs:
        pred_by_kind: dict[ToolKind, Any] = {}
        gold_by_kind: dict[ToolKind, Any] = {}
        for step in pair.predicted.steps:
            pred_by_kind.setdefault(step.tool, step)
        for step in pair.gold.steps:
            gold_by_kind.setdefault(step.tool, step)
        units: list[float] = []
        for kind in ToolKind:
            p, g = pred_by_kind.get(kind), gold_by_kind.get(kind)
            if p is None and g is None:
                continue
            if p is None or g is None:
                units.append(0.0)
                continue
            for name in _text_literal_args(kind, schemas):
                p_ref = p.args.get(name)
                g_ref = g.args.get(name)
                p_lit = p_ref.text if p_ref is not None and p_ref.is_literal else None
                g_lit = g_ref.text if g_ref is not None and g_ref.is_literal else None
                if p_lit is None and g_lit is None:
                    continue
                if p_lit is None or g_lit is None:
                    units.append(0.0)
                else:
                    units.append(sim(p_lit, g_lit))
        total += sum(units) / len(units) if units else 1.0
    return total / len(pairs)


# --- answer judging ----------------------------------------------------------


class JudgeBackend(Protocol):
    def score(self, instance: BenchmarkInstance, answer: str) -> float: ...


def _normalize_tokens(text: str) -> list[str]:
    tokens = []
    for token in text.lower().split():
        token = token.strip(string.punctuation)
        if token:
            tokens.append(token)
    return tokens


class MockJudgeBackend:
    """Deterministic grader: normalized exact match scores 2, containment of
    every gold token scores 1, anything else 0."""

    def score(self, instance: BenchmarkInstance, answer: str) -> float:
        gold = instance.gold_answer or ""
        gold_tokens = _normalize_tokens(gold)
        answer_tokens = _normalize_tokens(answer)
        if gold_tokens == answer_tokens:
            return 2.0
        if gold_tokens and set(gold_tokens) <= set(answer_tokens):
            return 1.0
        return 0.0


_SCORE_RE = re.compile(r"(\d+(?:\.\d+)?)")


class ChatJudgeBackend:
    """Grades via a chat endpoint using the bundled judge prompt."""

    def __init__(self, client):
        self.client = client

    def score(self, instance: BenchmarkInstance, answer: str) -> float:
        from .toolkit import load_template

        prompt = load_template("judge.j2").render(
            question=instance.question,
            gold_answer=instance.gold_answer,
            answer=answer,
        )
        reply = self._ask(prompt, instance.image)
        match = _SCORE_RE.search(reply)
        if match is None:
            reply = self._ask(
                prompt + "\n\nReply with a single number between 0 and 2.",
                instance.image,
            )
            match = _SCORE_RE.search(reply)
            if match is None:
                raise ScoreUnparseable(f"judge reply carried no number: {reply!r}")
        return float(match.group(1))

    def _ask(self, prompt: str, image: str) -> str:
        try:
            return self.client.complete(prompt, image=image)
        except Exception as exc:
            raise JudgeFailure(f"judge endpoint failed: {exc}") from exc


def judge_answer(
    backend: JudgeBackend, instance: BenchmarkInstance, answer: str
) -> float:
    """Score an answer in [0, 2] against the instance's gold answer."""
    if instance.gold_answer is None:
        raise ValueError(f"instance {instance.id} has no gold answer to judge against")
    score = float(backend.score(instance, answer))
    return min(2.0, max(0.0, score))


# --- correlation -------------------------------------------------------------


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Sample Pearson correlation; None for degenerate (constant or too-short)
    input."""
    if len(xs) != len(ys):
        raise LengthMismatch(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 2:
        return None
    # an exactly constant vector must read as degenerate even when fsum/n
    # rounding would leave a nonzero residual variance
    if all(x == xs[0] for x in xs) or all(y == ys[0] for y in ys):
        return None
    mean_x = math.fsum(xs) / n
    mean_y = math.fsum(ys) / n
    sxx = math.fsum((x - mean_x) ** 2 for x in xs)
    syy = math.fsum((y - mean_y) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        return None
    sxy = math.fsum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    return sxy / math.sqrt(sxx * syy)


# --- aggregation -------------------------------------------------------------


@dataclass(frozen=True)
class AverageCalls:
    search: float
    mllm: float
    planner: float


@dataclass(frozen=True)
class EvalReport:
    ans_by_type: dict[int, float | None]
    ans_overall: float | None
    is_p: float | None
    is_r: float | None
    ts_p: float | None
    ts_r: float | None
    plan_acc: float | None
    param_acc: float | None
    param_sim: float | None
    avg_counts: AverageCalls
    n_instances: int


def _mean(values: Sequence[float]) -> float | None:
    return sum(values) / len(values) if values else None


def aggregate_report(
    traces: Sequence[ExecutionTrace],
    pairs: Sequence[PlanPair],
    judge_scores: Mapping[str, float],
    instances: Sequence[BenchmarkInstance],
    embedder: EmbedderBackend | None = None,
) -> EvalReport:
    """Fold per-instance results into the overall report.

    Metrics whose annotations are absent come out as None and are excluded
    from rendering rather than coerced to a number.
    """
    by_id = {i.id: i for i in instances}
    for name, ids in (
        ("trace", [t.instance_id for t in traces]),
        ("pair", [p.instance_id for p in pairs]),
        ("score", list(judge_scores)),
    ):
        unknown = [i for i in ids if i not in by_id]
        if unknown:
            raise KeyMismatch(f"{name} ids not in dataset: {unknown[:5]}")

    ans_by_type: dict[int, float | None] = {}
    for qtype in (1, 2, 3, 4):
        scores = [
            s
            for iid, s in judge_scores.items()
            if by_id[iid].type == qtype
        ]
        ans_by_type[qtype] = _mean(scores)
    ans_overall = _mean(list(judge_scores.values()))

    if pairs:
        is_p, is_r = tool_pr(pairs, ToolKind.IMAGE_SEARCH)
        ts_p, ts_r = tool_pr(pairs, ToolKind.TEXT_SEARCH)
        plan_acc = plan_accuracy(pairs)
        param_acc = param_accuracy(pairs)
        param_sim = param_similarity(pairs, embedder)
    else:
        is_p = is_r = ts_p = ts_r = plan_acc = param_acc = param_sim = None

    if traces:
        n = len(traces)
        avg = AverageCalls(
            search=sum(t.counters.search_calls for t in traces) / n,
            mllm=sum(t.counters.mllm_calls for t in traces) / n,
            planner=sum(t.counters.planner_calls for t in traces) / n,
        )
    else:
        avg = AverageCalls(0.0, 0.0, 0.0)

    return EvalReport(
        ans_by_type=ans_by_type,
        ans_overall=ans_overall,
        is_p=is_p,
        is_r=is_r,
        ts_p=ts_p,
        ts_r=ts_r,
        plan_acc=plan_acc,
        param_acc=param_acc,
        param_sim=param_sim,
        avg_counts=avg,
        n_instances=len(instances),
    )


CSV_COLUMNS = (
    "type1_ans,type2_ans,type3_ans,type4_ans,all_ans,"
    "is_p,is_r,ts_p,ts_r,plan_acc,param_acc,param_sim,"
    "avg_search,avg_mllm,avg_planner"
)


def _metric_cell(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def render_report_csv(report: EvalReport) -> str:
    cells = [
        _metric_cell(report.ans_by_type.get(t)) for t in (1, 2, 3, 4)
    ]
    cells.append(_metric_cell(report.ans_overall))
    cells += [
        _metric_cell(v)
        for v in (
            report.is_p,
            report.is_r,
            report.ts_p,
            report.ts_r,
            report.plan_acc,
            report.param_acc,
            report.param_sim,
        )
    ]
    cells += [
        f"{v:.2f}"
        for v in (
            report.avg_counts.search,
            report.avg_counts.mllm,
            report.avg_counts.planner,
        )
    ]
    return CSV_COLUMNS + "\n" + ",".join(cells) + "\n"


def _md_cell(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def render_report_md(report: EvalReport) -> str:
    lines = [
        f"# Evaluation report ({report.n_instances} instances)",
        "",
        "## Answer quality (0-2)",
        "",
        "| Type 1 | Type 2 | Type 3 | Type 4 | All |",
        "| --- | --- | --- | --- | --- |",
        "| "
        + " | ".join(_md_cell(report.ans_by_type.get(t)) for t in (1, 2, 3, 4))
        + f" | {_md_cell(report.ans_overall)} |",
        "",
        "## Plan metrics",
        "",
        "| IS-P | IS-R | TS-P | TS-R | Plan-acc | Param-acc | Param-sim |",
        "| --- | --- | --- | --- | --- | --- | --- |",
        "| "
        + " | ".join(
            _md_cell(v)
            for v in (
                report.is_p,
                report.is_r,
                report.ts_p,
                report.ts_r,
                report.plan_acc,
                report.param_acc,
                report.param_sim,
            )
        )
        + " |",
        "",
        "## Average calls per instance",
        "",
        "| Search tools | MLLM | Planner |",
        "| --- | --- | --- |",
        f"| {report.avg_counts.search:.2f} | {report.avg_counts.mllm:.2f} "
        f"| {report.avg_counts.planner:.2f} |",
        "",
    ]
    return "\n".join(lines)


def overall_line(report: EvalReport) -> str:
    """One-line summary printed after an evaluation."""
    parts = [f"n={report.n_instances}"]
    parts.append(f"all_ans={_md_cell(report.ans_overall)}")
    for name in ("is_p", "is_r", "ts_p", "ts_r", "plan_acc", "param_acc", "param_sim"):
        parts.append(f"{name}={_md_cell(getattr(report, name))}")
    parts.append(
        f"avg_calls={report.avg_counts.search:.2f}/{report.avg_counts.mllm:.2f}"
        f"/{report.avg_counts.planner:.2f}"
    )
    return " ".join(parts)
