"""Completion backends: a real OpenAI-compatible client and a scripted mock.

Retry policy lives in :func:`chat_complete`, which wraps any backend, so
scripted mocks exercise the same code path the live client uses. Only
rate-limit and server errors are retried; authentication failures,
timeouts, and connection failures surface immediately.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol, runtime_checkable

import requests

from .errors import (
    AuthenticationError,
    BackendConnectionError,
    BackendError,
    BackendTimeoutError,
    ConfigError,
    ConversationError,
    MalformedResponseError,
    MockScriptError,
    RateLimitError,
    RetriesExhaustedError,
    ServerError,
)

DEFAULT_BASE_URL = "https://api.openai.com/v1"
API_KEY_ENV = "OPENAI_API_KEY"
MAX_BACKOFF_MS = 30_000
JITTER = 0.2


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for an OpenAI-compatible chat-completions API."""

    base_url: str = DEFAULT_BASE_URL
    api_key: str | None = None
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout: float = 60.0
    max_retries: int = 3
    initial_backoff_ms: float = 500.0

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ConfigError("base_url must be non-empty")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")
        if self.timeout <= 0:
            raise ConfigError("timeout must be > 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.initial_backoff_ms < 0:
            raise ConfigError("initial_backoff_ms must be >= 0")

    def resolve_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV)


class _Message(Protocol):
    role: str
    content: str


@runtime_checkable
class CompletionBackend(Protocol):
    """Anything that can answer one conversation with one reply string.

    Implementations perform a single attempt and raise a BackendError
    subtype on failure; retrying is the caller's job. They must be safe to
    call from several threads at once.
    """

    def complete(self, conversation: Sequence[_Message], config: BackendConfig) -> str:
        ...


def validate_conversation(conversation: Sequence[_Message]) -> None:
    """Check the role-ordering contract for a conversation about to be sent.

    The first message is the system prompt; the rest alternate user and
    assistant, ending on a user message.
    """
    if not conversation:
        raise ConversationError("conversation is empty")
    if conversation[0].role != "system":
        raise ConversationError("the first message must have role 'system'")
    for position, message in enumerate(conversation[1:]):
        expected = "user" if position % 2 == 0 else "assistant"
        if message.role != expected:
            raise ConversationError(
                f"message {position + 1} must have role {expected!r}, "
                f"got {message.role!r}"
            )
    if conversation[-1].role != "user":
        raise ConversationError("a submitted conversation must end with a user message")


def build_request_body(
    conversation: Sequence[_Message], config: BackendConfig
) -> dict[str, Any]:
    """The exact JSON body sent to the chat-completions endpoint."""
    return {
        "model": config.model,
        "messages": [
            {"role": message.role, "content": message.content}
            for message in conversation
        ],
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }


class HttpBackend:
    """Single-attempt client for any OpenAI-compatible chat-completions API."""

    def complete(self, conversation: Sequence[_Message], config: BackendConfig) -> str:
        url = config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        api_key = config.resolve_api_key()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = requests.post(
                url,
                json=build_request_body(conversation, config),
                headers=headers,
                timeout=config.timeout,
            )
        except requests.Timeout as exc:
            raise BackendTimeoutError(f"no answer within {config.timeout}s") from exc
        except requests.ConnectionError as exc:
            raise BackendConnectionError(f"cannot reach {url}: {exc}") from exc
        except requests.RequestException as exc:
            raise BackendError(f"request to {url} failed: {exc}") from exc
        status = response.status_code
        if status in (401, 403):
            raise AuthenticationError(f"backend rejected credentials (HTTP {status})")
        if status == 429:
            raise RateLimitError("backend rate limit hit (HTTP 429)")
        if status >= 500:
            raise ServerError(f"backend server error (HTTP {status})")
        if status != 200:
            raise BackendError(
                f"unexpected status {status}: {response.text[:200]}"
            )
        try:
            data = response.json()
        except ValueError as exc:
            raise MalformedResponseError(f"response body is not JSON: {exc}") from exc
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(
                "response body lacks choices[0].message.content"
            ) from exc
        if not isinstance(content, str):
            raise MalformedResponseError("completion content is not a string")
        return content


# A matcher is a substring required in the last user message, or a callable
# judging the whole conversation.
MockRule = tuple[str | Callable[[Sequence[_Message]], bool], str]


class MockBackend:
    """Deterministic scripted backend for offline runs and tests.

    Sequence mode replays ``replies`` in order and fails once they run out;
    an Exception instance in the list is raised instead of returned, which
    scripts failures. Matcher mode answers with the reply of the first rule
    whose matcher hits, regardless of call order. Every conversation seen
    is recorded in ``calls``.
    """

    def __init__(
        self,
        replies: Sequence[str | BaseException] | None = None,
        matchers: Sequence[MockRule] | None = None,
    ):
        if (replies is None) == (matchers is None):
            raise ConfigError("pass exactly one of replies= or matchers=")
        if replies is not None and not replies:
            raise ConfigError("sequence mode needs at least one scripted reply")
        self._replies = list(replies) if replies is not None else None
        self._matchers = list(matchers) if matchers is not None else None
        self._lock = threading.Lock()
        self.calls: list[tuple[_Message, ...]] = []

    def complete(self, conversation: Sequence[_Message], config: BackendConfig) -> str:
        with self._lock:
            self.calls.append(tuple(conversation))
            if self._replies is not None:
                if not self._replies:
                    raise MockScriptError(
                        f"mock reply script exhausted after {len(self.calls) - 1} calls"
                    )
                item = self._replies.pop(0)
            else:
                item = self._match(conversation)
        if isinstance(item, BaseException):
            raise item
        return item

    def _match(self, conversation: Sequence[_Message]) -> str | BaseException:
        last_user = next(
            (m for m in reversed(conversation) if m.role == "user"), None
        )
        for matcher, reply in self._matchers or ():
            if callable(matcher):
                if matcher(conversation):
                    return reply
            elif last_user is not None and matcher in last_user.content:
                return reply
        preview = last_user.content[:80] if last_user else "<no user message>"
        raise MockScriptError(f"no mock rule matched: {preview!r}")

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        """Load a script from JSON: {"replies": [...]} or {"matchers": [[substring, reply], ...]}."""
        with open(path, encoding="utf-8") as handle:
            try:
                data = json.load(handle)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"mock script {path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"mock script {path} must hold a JSON object")
        if ("replies" in data) == ("matchers" in data):
            raise ConfigError(
                f"mock script {path} must define exactly one of 'replies' or 'matchers'"
            )
        if "replies" in data:
            replies = data["replies"]
            if not isinstance(replies, list) or not all(
                isinstance(r, str) for r in replies
            ):
                raise ConfigError("'replies' must be a list of strings")
            return cls(replies=replies)
        matchers = data["matchers"]
        if not isinstance(matchers, list) or not all(
            isinstance(m, list)
            and len(m) == 2
            and all(isinstance(part, str) for part in m)
            for m in matchers
        ):
            raise ConfigError("'matchers' must be a list of [substring, reply] pairs")
        return cls(matchers=[(m[0], m[1]) for m in matchers])


def backoff_delay_ms(
    attempt: int, initial_ms: float, rng: random.Random | None = None
) -> float:
    """Delay before retry number ``attempt`` (0-based), in milliseconds.

    Exponential doubling from ``initial_ms`` with +/-20% jitter, capped at
    30 seconds. The cap is applied after the jitter, which keeps delays
    non-decreasing across consecutive retries.
    """
    uniform = rng.uniform if rng is not None else random.uniform
    base = initial_ms * (2**attempt)
    return min(base * (1 + uniform(-JITTER, JITTER)), MAX_BACKOFF_MS)


def chat_complete(
    conversation: Sequence[_Message],
    config: BackendConfig,
    backend: CompletionBackend | None = None,
    *,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> str:
    """Submit a conversation and return the assistant reply.

    Wraps ``backend`` (the live HTTP client by default) with the retry
    policy: rate-limit and server errors are retried up to
    ``config.max_retries`` times with exponential backoff, everything else
    propagates immediately.
    """
    validate_conversation(conversation)
    if backend is None:
        backend = HttpBackend()
    attempt = 0
    while True:
        try:
            return backend.complete(tuple(conversation), config)
        except (RateLimitError, ServerError) as exc:
            if attempt >= config.max_retries:
                raise RetriesExhaustedError(
                    f"gave up after {attempt + 1} attempts: {exc}"
                ) from exc
            sleep(backoff_delay_ms(attempt, config.initial_backoff_ms, rng) / 1000.0)
            attempt += 1
