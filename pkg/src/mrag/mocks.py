"""Deterministic offline backends: fixture-backed search, echo MLLM, fault injection."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import ToolFailure
from .plan import ToolKind
from .toolkit import (
    Snippet,
    ToolRegistry,
    ToolResult,
    render_prompt,
)

_FIXTURE_FILES = {
    ToolKind.IMAGE_SEARCH: "image_search.json",
    ToolKind.TEXT_SEARCH: "text_search.json",
}

_KEY_ARG = {ToolKind.IMAGE_SEARCH: "image", ToolKind.TEXT_SEARCH: "query"}


def _synthesized(kind: ToolKind, key: str) -> tuple[Snippet, ...]:
    # Stable stand-in results for keys absent from the fixture file.
    tag = hashlib.sha256(f"{kind.value}:{key}".encode("utf-8")).hexdigest()[:8]
    return (
        Snippet(
            title=f"Result for {key}",
            content=f"Canned {kind.value} content about {key} ({tag}).",
            source=f"mock://{kind.value}/{tag}/1",
        ),
        Snippet(
            title=f"More on {key}",
            content=f"Additional {kind.value} notes about {key} ({tag}).",
            source=f"mock://{kind.value}/{tag}/2",
        ),
    )


class FixtureSearchBackend:
    """Search backend keyed on the image ref or query string.

    Known keys return the canned snippets; unknown keys get synthesized,
    stable results so any dataset can run offline.
    """

    def __init__(
        self,
        kind: ToolKind,
        fixtures: Mapping[str, Sequence[Snippet]] | None = None,
        backend_id: str = "mock-search",
    ):
        self.kind = kind
        self.fixtures = dict(fixtures or {})
        self.backend_id = backend_id

    def invoke(self, args: dict[str, Any]) -> ToolResult:
        key = args[_KEY_ARG[self.kind]]
        snippets = self.fixtures.get(key)
        if snippets is None:
            snippets = _synthesized(self.kind, key)
        return ToolResult(
            kind=self.kind, payload=tuple(snippets), backend_id=self.backend_id
        )


class EchoMLLMBackend:
    """MLLM stand-in: text tools echo their rendered prompt, rerank passes
    its snippets through unchanged."""

    def __init__(self, kind: ToolKind, backend_id: str = "mock-mllm"):
        self.kind = kind
        self.backend_id = backend_id

    def invoke(self, args: dict[str, Any]) -> ToolResult:
        if self.kind is ToolKind.RERANK:
            payload: Any = tuple(args["snippets"])
        else:
            payload = "ECHO: " + render_prompt(self.kind, args)
        return ToolResult(kind=self.kind, payload=payload, backend_id=self.backend_id)


class FailingBackend:
    """Always raises ToolFailure; used for fault-injection tests and runs."""

    def __init__(self, kind: ToolKind, reason: str = "injected fault"):
        self.kind = kind
        self.reason = reason

    def invoke(self, args: dict[str, Any]) -> ToolResult:
        raise ToolFailure(self.kind, self.reason)


class ScriptedBackend:
    """Replays a queue of payloads or exceptions; handy in unit tests."""

    def __init__(self, kind: ToolKind, outputs: Sequence[Any], backend_id: str = "scripted"):
        self.kind = kind
        self.outputs = list(outputs)
        self.backend_id = backend_id
        self.calls = 0

    def invoke(self, args: dict[str, Any]) -> ToolResult:
        if not self.outputs:
            raise ToolFailure(self.kind, "script exhausted")
        self.calls += 1
        item = self.outputs.pop(0)
        if isinstance(item, Exception):
            raise item
        return ToolResult(kind=self.kind, payload=item, backend_id=self.backend_id)


def load_search_fixtures(
    fixtures_dir: str | Path,
) -> dict[ToolKind, dict[str, tuple[Snippet, ...]]]:
    """Read canned search payloads (JSON maps of key -> snippet list)."""
    fixtures: dict[ToolKind, dict[str, tuple[Snippet, ...]]] = {}
    root = Path(fixtures_dir)
    for kind, filename in _FIXTURE_FILES.items():
        path = root / filename
        if not path.exists():
            continue
        raw = json.loads(path.read_text("utf-8"))
        fixtures[kind] = {
            key: tuple(Snippet.from_obj(s) for s in snippets)
            for key, snippets in raw.items()
        }
    return fixtures


def build_mock_registry(
    fixtures_dir: str | Path | None = None,
    fail_kinds: Sequence[ToolKind] = (),
) -> ToolRegistry:
    """Registry with deterministic backends for all five tools."""
    fixtures = load_search_fixtures(fixtures_dir) if fixtures_dir else {}
    registry = ToolRegistry()
    for kind in (ToolKind.IMAGE_SEARCH, ToolKind.TEXT_SEARCH):
        registry.register(kind, FixtureSearchBackend(kind, fixtures.get(kind)))
    for kind in (ToolKind.REQUERY, ToolKind.RESPOND, ToolKind.RERANK):
        registry.register(kind, EchoMLLMBackend(kind))
    for kind in fail_kinds:
        registry.register(kind, FailingBackend(kind))
    return registry
