"""Provider-agnostic chat-completion and embedding access.

Two provider kinds are supported: ``http_api`` (a minimal JSON
chat-completion shape, see README) and ``scripted`` (canned responses matched
by call order, for deterministic tests and replays). Retries, rate limiting
and batching live here so callers never see them.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import random
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

logger = logging.getLogger("metasynth.gateway")

DEFAULT_CREDENTIALS_ENV_VAR = "METASYNTH_API_KEY"
DEFAULT_MAX_TOKENS = 4096
# Generation agents sample freely; judge calls run at temperature 0 so their
# verdicts are near-deterministic.
GENERATION_TEMPERATURE = 1.0
JUDGE_TEMPERATURE = 0.0

BACKOFF_BASE_SECONDS = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER = 0.2


class GatewayError(Exception):
    """Base error for provider access."""


class InvalidRequestError(GatewayError):
    pass


class AuthenticationError(GatewayError):
    pass


class RetriesExhaustedError(GatewayError):
    pass


class TransientProviderError(GatewayError):
    """Retryable failure: throttling, timeout, or a 5xx response."""


class ProviderError(GatewayError):
    """Non-retryable provider failure."""


class ScriptExhaustedError(GatewayError):
    pass


class ScriptMismatchError(GatewayError):
    """A scripted entry's expected-prompt substring did not appear."""


@dataclass
class ChatRequest:
    system: str | None
    messages: list[tuple[str, str]]
    temperature: float = GENERATION_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    stop_sequences: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not self.messages:
            raise InvalidRequestError("messages must be nonempty")
        for index, (role, _content) in enumerate(self.messages):
            expected = "user" if index % 2 == 0 else "assistant"
            if role != expected:
                raise InvalidRequestError(
                    "roles must alternate starting with user; "
                    f"message {index} has role {role!r}"
                )
        if self.temperature < 0:
            raise InvalidRequestError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise InvalidRequestError("max_tokens must be positive")

    def rendered(self) -> str:
        """Flatten the request to a single prompt string (used for scripted
        matching and call logs)."""
        parts = []
        if self.system:
            parts.append(self.system)
        parts.extend(content for _role, content in self.messages)
        return "\n\n".join(parts)


@dataclass
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    usage: tuple[int, int] = (0, 0)


@dataclass
class ProviderConfig:
    """Declarative provider description, loadable from run config files."""

    kind: str = "scripted"
    endpoint: str = ""
    credentials_env_var: str = DEFAULT_CREDENTIALS_ENV_VAR
    max_retries: int = 5
    requests_per_minute: int = 0  # 0 disables rate limiting
    script: list = field(default_factory=list)
    embedding_map: dict = field(default_factory=dict)
    embed_dim: int = 0  # >0 enables deterministic hash embeddings for unmapped texts
    batch_size: int = 512
    timeout_seconds: float = 60.0

    def validate(self) -> list[str]:
        problems = []
        if self.kind not in ("http_api", "scripted"):
            problems.append(f"unknown provider kind {self.kind!r}")
        if self.kind == "scripted" and not (
            self.script or self.embedding_map or self.embed_dim
        ):
            problems.append("scripted provider requires a nonempty script")
        if self.kind == "http_api" and not self.endpoint:
            problems.append("http_api provider requires an endpoint")
        if self.max_retries < 0:
            problems.append("max_retries must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        return problems

    @classmethod
    def from_dict(cls, obj: dict) -> "ProviderConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(obj) - allowed
        if unknown:
            raise ValueError(f"unknown provider config keys: {sorted(unknown)}")
        return cls(**obj)

    def build_chat(self, **overrides) -> "ChatProvider":
        if self.kind == "scripted":
            return ScriptedChatProvider(self.script)
        return HttpChatProvider(self, **overrides)

    def build_embedder(self, **overrides) -> "Embedder":
        if self.kind == "scripted":
            return ScriptedEmbedder(
                self.embedding_map, dim=self.embed_dim, batch_size=self.batch_size
            )
        return HttpEmbedder(self, **overrides)


class RateLimiter:
    """Sliding-window limiter: at most ``requests_per_minute`` dispatches in
    any trailing 60-second window, enforced with a timestamp log.

    Shared by all workers using one provider; ``clock``/``sleep`` are
    injectable for tests.
    """

    WINDOW_SECONDS = 60.0

    def __init__(
        self,
        requests_per_minute: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.requests_per_minute = requests_per_minute
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._dispatches: deque[float] = deque()

    def acquire(self) -> None:
        if self.requests_per_minute <= 0:
            return
        while True:
            with self._lock:
                now = self._clock()
                while self._dispatches and now - self._dispatches[0] >= self.WINDOW_SECONDS:
                    self._dispatches.popleft()
                if len(self._dispatches) < self.requests_per_minute:
                    self._dispatches.append(now)
                    return
                wait = self.WINDOW_SECONDS - (now - self._dispatches[0])
            self._sleep(max(wait, 0.0))


class ChatProvider:
    """Interface: blocking chat completion."""

    def complete(self, request: ChatRequest) -> ChatResponse:  # pragma: no cover
        raise NotImplementedError


def _estimate_tokens(text: str) -> int:
    return max(1, math.ceil(len(text) / 4)) if text else 0


def _normalize_script_entry(entry) -> tuple[str | None, str]:
    if isinstance(entry, str):
        return None, entry
    if isinstance(entry, dict):
        return entry.get("expect"), entry["response"]
    if isinstance(entry, (tuple, list)) and len(entry) == 2:
        return entry[0], entry[1]
    raise ValueError(f"bad script entry: {entry!r}")


class ScriptedChatProvider(ChatProvider):
    """Replays a fixed response list, matched purely by call order.

    Entries may optionally carry an expected-prompt substring
    (``{"expect": ..., "response": ...}``); a mismatch raises, which lets
    replay tests assert what the caller actually sent. All requests are
    recorded in ``calls``.
    """

    def __init__(self, script: Sequence) -> None:
        if not script:
            raise ValueError("scripted provider requires a nonempty script")
        self._entries = [_normalize_script_entry(entry) for entry in script]
        self._index = 0
        self._lock = threading.Lock()
        self.calls: list[str] = []

    @property
    def remaining(self) -> int:
        return len(self._entries) - self._index

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        prompt = request.rendered()
        with self._lock:
            if self._index >= len(self._entries):
                raise ScriptExhaustedError(
                    f"script exhausted after {len(self._entries)} responses"
                )
            expect, response = self._entries[self._index]
            self._index += 1
            self.calls.append(prompt)
        if expect is not None and expect not in prompt:
            raise ScriptMismatchError(
                f"call {self._index}: expected substring {expect!r} not in prompt"
            )
        return ChatResponse(
            content=response,
            finish_reason="stop",
            usage=(_estimate_tokens(prompt), _estimate_tokens(response)),
        )


def default_http_transport(
    url: str, payload: dict, headers: dict, timeout: float
) -> tuple[int, dict]:
    """POST JSON and return (status_code, parsed body). Network errors and
    timeouts surface as :class:`TransientProviderError`."""
    import requests

    try:
        response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.RequestException as exc:
        raise TransientProviderError(str(exc)) from exc
    try:
        body = response.json()
    except ValueError:
        body = {"raw": response.text}
    return response.status_code, body


class HttpChatProvider(ChatProvider):
    """Chat completion over a minimal JSON POST API with retry and rate cap.

    Transient failures (429, 5xx, timeouts) are retried with exponential
    backoff (base 1s, factor 2, jitter +/-20%) up to ``max_retries`` extra
    attempts. Backoff sleeps are recorded in ``backoff_sleeps``.
    """

    def __init__(
        self,
        config: ProviderConfig,
        transport: Callable[..., tuple[int, dict]] | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        rate_limiter: RateLimiter | None = None,
    ) -> None:
        self.config = config
        self._transport = transport or default_http_transport
        self._sleep = sleep
        self._rng = rng or random.Random()
        self.rate_limiter = rate_limiter or RateLimiter(
            config.requests_per_minute, clock=clock, sleep=sleep
        )
        self.backoff_sleeps: list[float] = []

    def _credentials(self) -> str:
        key = os.environ.get(self.config.credentials_env_var, "")
        if not key:
            raise AuthenticationError(
                f"credentials env var {self.config.credentials_env_var!r} is not set"
            )
        return key

    def _backoff_delay(self, attempt: int) -> float:
        base = BACKOFF_BASE_SECONDS * (BACKOFF_FACTOR ** attempt)
        jitter = self._rng.uniform(1.0 - BACKOFF_JITTER, 1.0 + BACKOFF_JITTER)
        return base * jitter

    def _call(self, payload: dict) -> dict:
        headers = {"Authorization": f"Bearer {self._credentials()}"}
        attempts = self.config.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            self.rate_limiter.acquire()
            try:
                status, body = self._transport(
                    self.config.endpoint, payload, headers, self.config.timeout_seconds
                )
            except TransientProviderError as exc:
                last_error = exc
                status, body = None, None
            else:
                if status == 200:
                    return body
                if status in (401, 403):
                    raise AuthenticationError(f"provider returned {status}")
                if status == 429 or status >= 500:
                    last_error = TransientProviderError(f"provider returned {status}")
                else:
                    raise ProviderError(f"provider returned {status}: {body}")
            if attempt < attempts - 1:
                delay = self._backoff_delay(attempt)
                self.backoff_sleeps.append(delay)
                self._sleep(delay)
        raise RetriesExhaustedError(
            f"gave up after {attempts} attempts: {last_error}"
        )

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        payload = {
            "system": request.system,
            "messages": [
                {"role": role, "content": content} for role, content in request.messages
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stop_sequences": request.stop_sequences,
        }
        body = self._call(payload)
        try:
            usage = body.get("usage") or {}
            return ChatResponse(
                content=body["content"],
                finish_reason=body.get("finish_reason", "stop"),
                usage=(
                    int(usage.get("input_tokens", 0)),
                    int(usage.get("output_tokens", 0)),
                ),
            )
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed provider response: {body!r}") from exc


def complete(request: ChatRequest, provider: ChatProvider) -> ChatResponse:
    """Run one validated chat completion against a provider."""
    request.validate()
    return provider.complete(request)


class Embedder:
    """Interface: batch text embedding. ``embed`` chunks transparently."""

    batch_size: int = 512

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise InvalidRequestError("texts must be nonempty")
        vectors: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            vectors.extend(self._embed_batch(list(texts[start : start + self.batch_size])))
        dims = {len(v) for v in vectors}
        if len(dims) > 1:
            raise ProviderError(f"embedding dimensions differ: {sorted(dims)}")
        return vectors

    def _embed_batch(self, batch: list[str]) -> list[list[float]]:  # pragma: no cover
        raise NotImplementedError


def hash_embedding(text: str, dim: int) -> list[float]:
    """Deterministic pseudo-embedding: unit vector derived from a SHA-256
    stream of the text. Good enough to exercise geometry paths in tests."""
    values: list[float] = []
    counter = 0
    while len(values) < dim:
        digest = hashlib.sha256(f"{counter}\x1f{text}".encode("utf-8")).digest()
        for offset in range(0, len(digest) - 7, 8):
            (raw,) = struct.unpack(">q", digest[offset : offset + 8])
            values.append(raw / float(2**63))
            if len(values) == dim:
                break
        counter += 1
    norm = math.sqrt(sum(v * v for v in values))
    return [v / norm for v in values] if norm else values


class ScriptedEmbedder(Embedder):
    """Maps known texts to fixed vectors; optionally hash-embeds the rest.

    ``batch_calls`` counts underlying batch dispatches so tests can assert
    batching behavior.
    """

    def __init__(self, embedding_map: dict, dim: int = 0, batch_size: int = 512) -> None:
        self._map = dict(embedding_map or {})
        self._dim = dim
        self.batch_size = batch_size
        self.batch_calls = 0

    def _embed_batch(self, batch: list[str]) -> list[list[float]]:
        self.batch_calls += 1
        out = []
        for text in batch:
            if text in self._map:
                out.append([float(x) for x in self._map[text]])
            elif self._dim > 0:
                out.append(hash_embedding(text, self._dim))
            else:
                raise ProviderError(f"no scripted embedding for text {text[:40]!r}")
        return out


class HttpEmbedder(Embedder):
    """Embeddings over the same minimal JSON POST shape as chat."""

    def __init__(
        self,
        config: ProviderConfig,
        transport: Callable[..., tuple[int, dict]] | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        rate_limiter: RateLimiter | None = None,
    ) -> None:
        self.batch_size = config.batch_size
        self._chat = HttpChatProvider(
            config,
            transport=transport,
            clock=clock,
            sleep=sleep,
            rng=rng,
            rate_limiter=rate_limiter,
        )

    def _embed_batch(self, batch: list[str]) -> list[list[float]]:
        body = self._chat._call({"texts": batch})
        try:
            vectors = body["embeddings"]
            return [[float(x) for x in vector] for vector in vectors]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed embedding response: {body!r}") from exc


def embed(texts: Sequence[str], provider: Embedder) -> list[list[float]]:
    """Embed texts, one vector per input, batching handled internally."""
    return provider.embed(texts)
