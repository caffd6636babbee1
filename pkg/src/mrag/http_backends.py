"""Live HTTP adapters: chat-completions MLLM endpoints and snippet search APIs."""

from __future__ import annotations

import base64
import mimetypes
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import requests

from .errors import ConfigError, ToolFailure
from .plan import ToolKind
from .toolkit import Snippet, ToolRegistry, ToolResult, render_prompt


def _image_segment(image_ref: str) -> dict:
    """Image refs that are URLs pass through; local paths are inlined base64."""
    if image_ref.startswith(("http://", "https://", "data:")):
        url = image_ref
    else:
        path = Path(image_ref)
        mime = mimetypes.guess_type(image_ref)[0] or "image/jpeg"
        data = base64.b64encode(path.read_bytes()).decode("ascii")
        url = f"data:{mime};base64,{data}"
    return {"type": "image_url", "image_url": {"url": url}}


@dataclass(frozen=True)
class ChatEndpointConfig:
    url: str
    model: str
    api_key: str | None = None
    timeout: float = 120.0


class ChatCompletionsClient:
    """Minimal client for chat-completions style endpoints with image input."""

    def __init__(self, config: ChatEndpointConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()

    def complete(self, prompt: str, image: str | None = None) -> str:
        content: list[dict] | str
        if image is not None:
            content = [{"type": "text", "text": prompt}, _image_segment(image)]
        else:
            content = prompt
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
        }
        headers = {}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        response = self.session.post(
            self.config.url, json=body, headers=headers, timeout=self.config.timeout
        )
        response.raise_for_status()
        message = response.json()["choices"][0]["message"]["content"]
        if isinstance(message, list):  # segmented replies
            message = "".join(
                seg.get("text", "") for seg in message if isinstance(seg, dict)
            )
        return str(message)


class ChatMLLMBackend:
    """Runs an MLLM-backed tool against a chat endpoint."""

    def __init__(self, kind: ToolKind, client: ChatCompletionsClient, backend_id: str = "mllm-http"):
        self.kind = kind
        self.client = client
        self.backend_id = backend_id

    def invoke(self, args: dict[str, Any]) -> ToolResult:
        prompt = render_prompt(self.kind, args)
        try:
            reply = self.client.complete(prompt, image=args.get("image"))
        except requests.RequestException as exc:
            raise ToolFailure(self.kind, exc) from exc
        if self.kind is ToolKind.RERANK:
            payload: Any = _select_snippets(reply, tuple(args["snippets"]))
        else:
            payload = reply.strip()
        return ToolResult(kind=self.kind, payload=payload, backend_id=self.backend_id)


def _select_snippets(reply: str, snippets: tuple[Snippet, ...]) -> tuple[Snippet, ...]:
    # The rerank prompt asks for 1-based indices; fall back to the full list
    # when the reply is unusable.
    picks = []
    for token in re.findall(r"\d+", reply):
        i = int(token) - 1
        if 0 <= i < len(snippets) and snippets[i] not in picks:
            picks.append(snippets[i])
    return tuple(picks) if picks else snippets


@dataclass(frozen=True)
class SearchEndpointConfig:
    url: str
    api_key: str | None = None
    timeout: float = 30.0
    query_field: str = "query"
    results_field: str = "results"
    title_fields: tuple[str, ...] = ("title", "name")
    content_fields: tuple[str, ...] = ("content", "snippet", "text", "description")
    source_fields: tuple[str, ...] = ("source", "url", "link")


class HTTPSearchBackend:
    """POSTs the key argument to a snippet-returning search endpoint.

    Field names are configurable so provider-specific response shapes map
    onto snippets without code changes.
    """

    def __init__(
        self,
        kind: ToolKind,
        config: SearchEndpointConfig,
        session: requests.Session | None = None,
        backend_id: str = "search-http",
    ):
        self.kind = kind
        self.config = config
        self.session = session or requests.Session()
        self.backend_id = backend_id

    def _first(self, item: Mapping[str, Any], names: tuple[str, ...]) -> str:
        for name in names:
            if name in item and item[name] is not None:
                return str(item[name])
        return ""

    def invoke(self, args: dict[str, Any]) -> ToolResult:
        key = args["image"] if self.kind is ToolKind.IMAGE_SEARCH else args["query"]
        headers = {}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        try:
            response = self.session.post(
                self.config.url,
                json={self.config.query_field: key},
                headers=headers,
                timeout=self.config.timeout,
            )
            response.raise_for_status()
            data = response.json()
        except requests.RequestException as exc:
            raise ToolFailure(self.kind, exc) from exc
        items = data.get(self.config.results_field, []) if isinstance(data, dict) else []
        snippets = tuple(
            Snippet(
                title=self._first(item, self.config.title_fields),
                content=self._first(item, self.config.content_fields),
                source=self._first(item, self.config.source_fields),
            )
            for item in items
            if isinstance(item, Mapping)
        )
        return ToolResult(kind=self.kind, payload=snippets, backend_id=self.backend_id)


# Environment variables consumed by the live registry / planner builders.
ENV_MLLM = ("MRAG_MLLM_URL", "MRAG_MLLM_MODEL", "MRAG_MLLM_KEY")
ENV_PLANNER = ("MRAG_PLANNER_URL", "MRAG_PLANNER_MODEL", "MRAG_PLANNER_KEY")
ENV_TEXTSEARCH = ("MRAG_TEXTSEARCH_URL", "MRAG_TEXTSEARCH_KEY")
ENV_IMAGESEARCH = ("MRAG_IMAGESEARCH_URL", "MRAG_IMAGESEARCH_KEY")


def _require(environ: Mapping[str, str], names: list[str]) -> None:
    missing = [n for n in names if not environ.get(n)]
    if missing:
        raise ConfigError(
            "missing environment variables: " + ", ".join(missing)
        )


def chat_config_from_env(
    environ: Mapping[str, str] | None = None, prefix: str = "MRAG_MLLM"
) -> ChatEndpointConfig:
    environ = os.environ if environ is None else environ
    _require(environ, [f"{prefix}_URL", f"{prefix}_MODEL"])
    return ChatEndpointConfig(
        url=environ[f"{prefix}_URL"],
        model=environ[f"{prefix}_MODEL"],
        api_key=environ.get(f"{prefix}_KEY") or None,
    )


def search_config_from_env(
    environ: Mapping[str, str] | None = None, prefix: str = "MRAG_TEXTSEARCH"
) -> SearchEndpointConfig:
    environ = os.environ if environ is None else environ
    _require(environ, [f"{prefix}_URL"])
    return SearchEndpointConfig(
        url=environ[f"{prefix}_URL"],
        api_key=environ.get(f"{prefix}_KEY") or None,
    )


def build_live_registry(
    environ: Mapping[str, str] | None = None,
    session: requests.Session | None = None,
) -> ToolRegistry:
    """Registry wired to the live endpoints named in the environment."""
    environ = os.environ if environ is None else environ
    mllm = ChatCompletionsClient(chat_config_from_env(environ, "MRAG_MLLM"), session)
    registry = ToolRegistry()
    registry.register(
        ToolKind.IMAGE_SEARCH,
        HTTPSearchBackend(
            ToolKind.IMAGE_SEARCH,
            search_config_from_env(environ, "MRAG_IMAGESEARCH"),
            session,
        ),
    )
    registry.register(
        ToolKind.TEXT_SEARCH,
        HTTPSearchBackend(
            ToolKind.TEXT_SEARCH,
            search_config_from_env(environ, "MRAG_TEXTSEARCH"),
            session,
        ),
    )
    for kind in (ToolKind.REQUERY, ToolKind.RESPOND, ToolKind.RERANK):
        registry.register(kind, ChatMLLMBackend(kind, mllm))
    return registry


def planner_client_from_env(
    environ: Mapping[str, str] | None = None,
    session: requests.Session | None = None,
) -> ChatCompletionsClient:
    """Client for the planner endpoint, which may differ from the tool MLLM."""
    return ChatCompletionsClient(
        chat_config_from_env(os.environ if environ is None else environ, "MRAG_PLANNER"),
        session,
    )
