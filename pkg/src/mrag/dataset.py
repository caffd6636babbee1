"""Benchmark file loading, validation, and dataset statistics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    ArchetypeMismatch,
    BadMatrix,
    DatasetError,
    DatasetLoadError,
    DuplicateId,
    NotPSD,
    SchemaError,
)
from .plan import (
    PROFILE_STRICT,
    Plan,
    archetype_of,
    plan_from_obj,
    plan_to_obj,
    validate_plan,
)


@dataclass(frozen=True)
class BenchmarkInstance:
    """One image-question record, optionally annotated with a gold plan,
    gold answer, and question type."""

    id: str
    image: str
    question: str
    type: int | None = None
    gold_plan: Plan | None = None
    gold_answer: str | None = None


@dataclass(frozen=True)
class DatasetStats:
    n: int
    type_histogram: dict[int, int]
    mean_answer_tokens: float
    diversity: float | None = None


def instance_to_obj(instance: BenchmarkInstance) -> dict:
    obj: dict[str, Any] = {
        "id": instance.id,
        "image": instance.image,
        "question": instance.question,
    }
    if instance.type is not None:
        obj["type"] = instance.type
    if instance.gold_plan is not None:
        obj["gold_plan"] = plan_to_obj(instance.gold_plan)
    if instance.gold_answer is not None:
        obj["gold_answer"] = instance.gold_answer
    return obj


def save_instances(instances: Sequence[BenchmarkInstance], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for instance in instances:
            fh.write(json.dumps(instance_to_obj(instance), ensure_ascii=False) + "\n")


def _parse_line(line_no: int, obj: Mapping[str, Any], errors: list[DatasetError]):
    def fail(fieldname: str, message: str):
        errors.append(SchemaError(line_no, fieldname, message))

    instance_id = obj.get("id")
    if not isinstance(instance_id, str) or not instance_id:
        fail("id", "required non-empty string")
        return None
    image = obj.get("image")
    if not isinstance(image, str) or not image:
        fail("image", "required non-empty string")
        return None
    question = obj.get("question")
    if not isinstance(question, str) or not question.strip():
        fail("question", "required non-empty string")
        return None

    qtype = obj.get("type")
    if qtype is not None and (not isinstance(qtype, int) or qtype not in (1, 2, 3, 4)):
        fail("type", "must be an integer in 1..4")
        return None

    gold_plan = None
    raw_plan = obj.get("gold_plan")
    if raw_plan is not None:
        if not isinstance(raw_plan, Mapping):
            fail("gold_plan", "must be a plan object")
            return None
        try:
            gold_plan = plan_from_obj(raw_plan)
        except Exception as exc:
            fail("gold_plan", str(exc))
            return None
        report = validate_plan(gold_plan, profile=PROFILE_STRICT)
        if not report.valid:
            fail(
                "gold_plan",
                "not strictly valid: " + ", ".join(sorted(report.codes())),
            )
            return None
        if qtype is not None:
            derived = archetype_of(gold_plan)
            if derived != qtype:
                errors.append(ArchetypeMismatch(line_no, qtype, derived))
                return None

    gold_answer = obj.get("gold_answer")
    if gold_answer is not None and not isinstance(gold_answer, str):
        fail("gold_answer", "must be a string")
        return None

    return BenchmarkInstance(
        id=instance_id,
        image=image,
        question=question,
        type=qtype,
        gold_plan=gold_plan,
        gold_answer=gold_answer,
    )


def load_instances(path: str | Path) -> list[BenchmarkInstance]:
    """Load one-instance-per-line benchmark files.

    All per-line problems are collected before failing so a bad file is
    reported in one pass.
    """
    errors: list[DatasetError] = []
    instances: list[BenchmarkInstance] = []
    seen_ids: dict[str, int] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(SchemaError(line_no, "<line>", f"invalid JSON: {exc}"))
                continue
            if not isinstance(obj, dict):
                errors.append(SchemaError(line_no, "<line>", "not an object"))
                continue
            instance = _parse_line(line_no, obj, errors)
            if instance is None:
                continue
            if instance.id in seen_ids:
                errors.append(DuplicateId(line_no, instance.id))
                continue
            seen_ids[instance.id] = line_no
            instances.append(instance)
    if errors:
        raise DatasetLoadError(errors)
    return instances


def _check_similarity(matrix: np.ndarray) -> np.ndarray:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise BadMatrix(f"similarity matrix must be square, got shape {matrix.shape}")
    if matrix.shape[0] == 0:
        raise BadMatrix("similarity matrix is empty")
    if not np.allclose(matrix, matrix.T, atol=1e-8):
        raise BadMatrix("similarity matrix must be symmetric")
    if not np.allclose(np.diag(matrix), 1.0, atol=1e-8):
        raise BadMatrix("similarity matrix diagonal must be all ones")
    if matrix.min() < -1e-12 or matrix.max() > 1.0 + 1e-8:
        raise BadMatrix("similarity entries must lie in [0, 1]")
    return matrix.astype(float)


def diversity_score(similarity: np.ndarray | Sequence[Sequence[float]]) -> float:
    """Effective number of distinct items under the similarity matrix.

    Exponentiated Shannon entropy of the eigenvalue spectrum of K/n; ranges
    from 1 (rank one: all items identical) to n (identity: all orthogonal).
    """
    matrix = _check_similarity(np.asarray(similarity, dtype=float))
    n = matrix.shape[0]
    eigenvalues = np.linalg.eigvalsh(matrix / n)
    if eigenvalues.min() < -1e-9:
        raise NotPSD(
            f"similarity matrix is not positive semidefinite "
            f"(min eigenvalue {eigenvalues.min():.3e})"
        )
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    positive = eigenvalues[eigenvalues > 0]
    entropy = float(-(positive * np.log(positive)).sum())
    return float(math.exp(entropy))


def dataset_stats(
    instances: Sequence[BenchmarkInstance],
    similarity: np.ndarray | Sequence[Sequence[float]] | None = None,
) -> DatasetStats:
    """Type histogram, mean gold-answer length, and optional diversity."""
    histogram = {t: 0 for t in (1, 2, 3, 4)}
    for instance in instances:
        if instance.type is not None:
            histogram[instance.type] += 1
    answered = [i.gold_answer for i in instances if i.gold_answer is not None]
    mean_tokens = (
        sum(len(a.split()) for a in answered) / len(answered) if answered else 0.0
    )
    diversity = None
    if similarity is not None:
        matrix = np.asarray(similarity, dtype=float)
        if matrix.ndim != 2 or matrix.shape != (len(instances), len(instances)):
            raise BadMatrix(
                f"similarity matrix shape {matrix.shape} does not match "
                f"{len(instances)} instances"
            )
        diversity = diversity_score(matrix)
    return DatasetStats(
        n=len(instances),
        type_histogram=histogram,
        mean_answer_tokens=mean_tokens,
        diversity=diversity,
    )


def load_similarity_matrix(path: str | Path) -> np.ndarray:
    """Read the plain-text matrix format: first line n, then n rows of n values."""
    text = Path(path).read_text("utf-8").split()
    if not text:
        raise BadMatrix(f"{path}: empty file")
    try:
        n = int(text[0])
        values = [float(v) for v in text[1:]]
    except ValueError as exc:
        raise BadMatrix(f"{path}: {exc}") from exc
    if len(values) != n * n:
        raise BadMatrix(f"{path}: expected {n * n} values, found {len(values)}")
    return np.array(values, dtype=float).reshape(n, n)
