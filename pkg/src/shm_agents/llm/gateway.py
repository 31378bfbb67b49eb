"""Chat-completion access with two backends.

RemoteBackend speaks the OpenAI-compatible wire protocol
(``POST {endpoint}/v1/chat/completions``); ScriptedBackend replays a fixed
queue of replies so whole dialogues run deterministically offline.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol

import httpx

from ..errors import FatalError, LlmAuthError, LlmUnavailableError

DEFAULT_KEY_ENV = "SHM_AGENTS_LLM_KEY"

PLAN_TEMPERATURE = 0.0      # architecture / allocate prompts
SUMMARY_TEMPERATURE = 0.3   # summary prose


@dataclass
class ChatRequest:
    messages: list[dict[str, str]]
    temperature: float = 0.0
    max_tokens: int = 2048
    model: str = "default"

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0].get("role") != "system":
            raise ValueError("first message must have role 'system'")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def rendered(self) -> str:
        return "\n".join(f"[{m['role']}] {m['content']}" for m in self.messages)


def make_request(system: str, user: str, *, temperature: float = 0.0,
                 model: str = "default", history: Optional[list[dict[str, str]]] = None,
                 max_tokens: int = 2048) -> ChatRequest:
    messages = [{"role": "system", "content": system}]
    messages.extend(history or [])
    messages.append({"role": "user", "content": user})
    return ChatRequest(messages=messages, temperature=temperature,
                       max_tokens=max_tokens, model=model)


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class ScriptExhaustedError(FatalError):
    pass


class ScriptMismatchError(FatalError):
    pass


class ScriptedBackend:
    """Deterministic backend: replies are consumed strictly in order.

    Each entry is ``{"reply": text}`` with an optional ``"expect"``
    substring that must occur in the rendered request; a mismatch or an
    exhausted queue raises so tests see exactly where a replay diverged.
    """

    def __init__(self, entries: list[dict[str, Any]]):
        self.entries = list(entries)
        self.consumed = 0

    @classmethod
    def from_file(cls, path: str) -> "ScriptedBackend":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            data = data.get("entries", [])
        return cls(data)

    def complete(self, request: ChatRequest) -> str:
        if self.consumed >= len(self.entries):
            raise ScriptExhaustedError(
                f"scripted backend exhausted after {self.consumed} replies; "
                f"next request started: {request.messages[-1]['content'][:120]!r}"
            )
        entry = self.entries[self.consumed]
        expect = entry.get("expect")
        if expect and expect not in request.rendered():
            raise ScriptMismatchError(
                f"scripted reply {self.consumed} expected {expect!r} in the request, "
                f"got: {request.rendered()[:300]!r}"
            )
        self.consumed += 1
        return entry["reply"]


class RemoteBackend:
    """OpenAI-compatible HTTP backend with bounded retry on transient faults."""

    MAX_RETRIES = 2

    def __init__(self, endpoint: str, model: str, key_env: str = DEFAULT_KEY_ENV,
                 timeout: float = 60.0, sleep: Callable[[float], None] = time.sleep,
                 transport: Optional[httpx.BaseTransport] = None):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.key_env = key_env
        self.timeout = timeout
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, request: ChatRequest) -> str:
        key = os.environ.get(self.key_env or DEFAULT_KEY_ENV)
        if not key:
            raise LlmAuthError(f"no API key in environment variable {self.key_env!r}")
        body = {
            "model": request.model if request.model != "default" else self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        url = f"{self.endpoint}/v1/chat/completions"
        headers = {"Authorization": f"Bearer {key}"}
        last_error: Optional[Exception] = None
        for attempt in range(self.MAX_RETRIES + 1):
            if attempt:
                self._sleep(0.5 * 2 ** (attempt - 1))
            try:
                resp = self._client.post(url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if resp.status_code in (401, 403):
                raise LlmAuthError(f"LLM endpoint rejected credentials (HTTP {resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = RuntimeError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise LlmUnavailableError(f"LLM endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, ValueError) as exc:
                raise LlmUnavailableError(f"malformed completion payload: {exc}")
        raise LlmUnavailableError(f"LLM endpoint unreachable after retries: {last_error}")


@dataclass
class LlmGateway:
    """Uniform entry point the rest of the system talks to."""

    backend: Backend
    model: str = "default"
    transcript: list[dict[str, str]] = field(default_factory=list)

    def chat(self, request: ChatRequest) -> str:
        reply = self.backend.complete(request)
        self.transcript.append({"request": request.rendered(), "reply": reply})
        return reply

    def ask(self, system: str, user: str, *, temperature: float = 0.0,
            history: Optional[list[dict[str, str]]] = None) -> str:
        return self.chat(make_request(system, user, temperature=temperature,
                                      model=self.model, history=history))
