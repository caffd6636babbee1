"""Tool schemas, the backend registry, call accounting, and prompt rendering."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping, Protocol, Sequence

import jinja2

from .errors import BackendMissing, InvalidArgs, ToolFailure
from .plan import ToolKind

#: Bounds applied to retrieved snippets before they reach a prompt.
MAX_SNIPPETS = 10
MAX_SNIPPET_CHARS = 2000


class SemanticType(Enum):
    IMAGE_REF = "image-ref"
    TEXT = "text"
    SNIPPETS = "snippets"


class Backing(Enum):
    SEARCH_ENGINE = "search-engine"
    MLLM = "mllm"


@dataclass(frozen=True)
class ArgSpec:
    name: str
    semantic: SemanticType
    required: bool = True


@dataclass(frozen=True)
class ToolSchema:
    kind: ToolKind
    args: tuple[ArgSpec, ...]
    output: SemanticType
    backing: Backing

    def arg(self, name: str) -> ArgSpec | None:
        for spec in self.args:
            if spec.name == name:
                return spec
        return None

    @property
    def required_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.args if a.required)

    @property
    def arg_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.args)


ToolSchemaSet = Mapping[ToolKind, ToolSchema]

DEFAULT_SCHEMAS: ToolSchemaSet = {
    ToolKind.IMAGE_SEARCH: ToolSchema(
        kind=ToolKind.IMAGE_SEARCH,
        args=(ArgSpec("image", SemanticType.IMAGE_REF),),
        output=SemanticType.SNIPPETS,
        backing=Backing.SEARCH_ENGINE,
    ),
    ToolKind.TEXT_SEARCH: ToolSchema(
        kind=ToolKind.TEXT_SEARCH,
        args=(ArgSpec("query", SemanticType.TEXT),),
        output=SemanticType.SNIPPETS,
        backing=Backing.SEARCH_ENGINE,
    ),
    ToolKind.REQUERY: ToolSchema(
        kind=ToolKind.REQUERY,
        args=(
            ArgSpec("image", SemanticType.IMAGE_REF),
            ArgSpec("question", SemanticType.TEXT),
            ArgSpec("context", SemanticType.SNIPPETS, required=False),
        ),
        output=SemanticType.TEXT,
        backing=Backing.MLLM,
    ),
    ToolKind.RESPOND: ToolSchema(
        kind=ToolKind.RESPOND,
        args=(
            ArgSpec("image", SemanticType.IMAGE_REF),
            ArgSpec("question", SemanticType.TEXT),
            ArgSpec("image_search", SemanticType.SNIPPETS, required=False),
            ArgSpec("text_search", SemanticType.SNIPPETS, required=False),
        ),
        output=SemanticType.TEXT,
        backing=Backing.MLLM,
    ),
    ToolKind.RERANK: ToolSchema(
        kind=ToolKind.RERANK,
        args=(
            ArgSpec("question", SemanticType.TEXT),
            ArgSpec("snippets", SemanticType.SNIPPETS),
        ),
        output=SemanticType.SNIPPETS,
        backing=Backing.MLLM,
    ),
}

MLLM_KINDS = frozenset(
    k for k, s in DEFAULT_SCHEMAS.items() if s.backing is Backing.MLLM
)
SEARCH_KINDS = frozenset(
    k for k, s in DEFAULT_SCHEMAS.items() if s.backing is Backing.SEARCH_ENGINE
)


@dataclass(frozen=True)
class Snippet:
    """One retrieved result: a title, its content, and where it came from."""

    title: str
    content: str
    source: str

    def to_obj(self) -> dict:
        return {"title": self.title, "content": self.content, "source": self.source}

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "Snippet":
        return cls(
            title=str(obj.get("title", "")),
            content=str(obj.get("content", "")),
            source=str(obj.get("source", "")),
        )


Payload = str | tuple[Snippet, ...]


@dataclass(frozen=True)
class ToolResult:
    kind: ToolKind
    payload: Payload
    latency_ms: float = 0.0
    backend_id: str = ""


@dataclass
class CallCounters:
    """Per-trace invocation counts; attempts are counted, not successes."""

    search_calls: int = 0
    mllm_calls: int = 0
    planner_calls: int = 0

    def __add__(self, other: "CallCounters") -> "CallCounters":
        return CallCounters(
            self.search_calls + other.search_calls,
            self.mllm_calls + other.mllm_calls,
            self.planner_calls + other.planner_calls,
        )

    def to_obj(self) -> dict:
        return {
            "search_calls": self.search_calls,
            "mllm_calls": self.mllm_calls,
            "planner_calls": self.planner_calls,
        }

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "CallCounters":
        return cls(
            search_calls=int(obj.get("search_calls", 0)),
            mllm_calls=int(obj.get("mllm_calls", 0)),
            planner_calls=int(obj.get("planner_calls", 0)),
        )


class ToolBackend(Protocol):
    def invoke(self, args: dict[str, Any]) -> ToolResult: ...


def _check_args(kind: ToolKind, args: Mapping[str, Any], schema: ToolSchema):
    for name in schema.required_names:
        if name not in args:
            raise InvalidArgs(f"{kind.value}: missing argument {name!r}")
    declared = set(schema.arg_names)
    for name, value in args.items():
        if name not in declared:
            raise InvalidArgs(f"{kind.value}: unexpected argument {name!r}")
        spec = schema.arg(name)
        assert spec is not None
        if spec.semantic is SemanticType.SNIPPETS:
            if not isinstance(value, Sequence) or isinstance(value, str):
                raise InvalidArgs(f"{kind.value}: argument {name!r} must be snippets")
        elif not isinstance(value, str):
            raise InvalidArgs(f"{kind.value}: argument {name!r} must be a string")


class ToolRegistry:
    """Routes tool invocations to pluggable backends.

    Intended use: register everything up front, then share the registry across
    concurrent executions without further mutation.
    """

    def __init__(self, schemas: ToolSchemaSet = DEFAULT_SCHEMAS):
        self.schemas = schemas
        self._backends: dict[ToolKind, ToolBackend] = {}

    def register(self, kind: ToolKind, backend: ToolBackend) -> "ToolRegistry":
        """Register (or replace) the backend for a tool kind."""
        self._backends[kind] = backend
        return self

    def backend_for(self, kind: ToolKind) -> ToolBackend | None:
        return self._backends.get(kind)

    def invoke(
        self, kind: ToolKind, args: dict[str, Any], counters: CallCounters
    ) -> ToolResult:
        """Invoke the backend for `kind` with fully resolved arguments.

        Counters tick before the backend runs, so failed attempts still
        register as cost.
        """
        schema = self.schemas[kind]
        _check_args(kind, args, schema)
        backend = self._backends.get(kind)
        if backend is None:
            raise BackendMissing(kind)
        if schema.backing is Backing.SEARCH_ENGINE:
            counters.search_calls += 1
        else:
            counters.mllm_calls += 1
        start = time.perf_counter()
        try:
            result = backend.invoke(args)
        except ToolFailure:
            raise
        except Exception as exc:
            raise ToolFailure(kind, exc) from exc
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        if schema.output is SemanticType.TEXT and not isinstance(result.payload, str):
            raise ToolFailure(kind, "backend returned non-text payload")
        if schema.output is SemanticType.SNIPPETS and isinstance(result.payload, str):
            raise ToolFailure(kind, "backend returned text where snippets expected")
        return replace(result, latency_ms=elapsed_ms)


def format_snippets(
    snippets: Sequence[Snippet],
    max_snippets: int = MAX_SNIPPETS,
    max_chars: int = MAX_SNIPPET_CHARS,
) -> str:
    """Render snippets as a numbered text block, capped for prompt use."""
    lines = []
    for i, snip in enumerate(snippets[:max_snippets], start=1):
        content = snip.content[:max_chars]
        lines.append(f"[{i}] {snip.title}: {content} (source: {snip.source})")
    return "\n".join(lines)


_TEMPLATE_FILES = {
    ToolKind.REQUERY: "requery.j2",
    ToolKind.RESPOND: "respond.j2",
    ToolKind.RERANK: "rerank.j2",
}


@lru_cache(maxsize=None)
def _template_env() -> jinja2.Environment:
    root = resources.files("mrag") / "templates"
    env = jinja2.Environment(
        loader=jinja2.FunctionLoader(lambda name: (root / name).read_text("utf-8")),
        undefined=jinja2.StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=False,
    )
    return env


def load_template(name: str) -> jinja2.Template:
    return _template_env().get_template(name)


def render_prompt(
    kind: ToolKind, args: Mapping[str, Any], schemas: ToolSchemaSet = DEFAULT_SCHEMAS
) -> str:
    """Instantiate the prompt template for an MLLM-backed tool.

    Rendering is deterministic; optional context sections appear only when the
    corresponding argument is present.
    """
    schema = schemas[kind]
    if schema.backing is not Backing.MLLM:
        raise InvalidArgs(f"{kind.value} has no prompt template")
    for name in schema.required_names:
        if name not in args:
            raise InvalidArgs(f"{kind.value}: missing argument {name!r}")
    context: dict[str, Any] = {}
    for spec in schema.args:
        value = args.get(spec.name)
        if value is not None and spec.semantic is SemanticType.SNIPPETS:
            value = format_snippets(value)
        context[spec.name] = value
    return load_template(_TEMPLATE_FILES[kind]).render(**context).strip()
