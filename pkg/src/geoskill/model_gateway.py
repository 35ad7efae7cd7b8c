"""Uniform access to chat-style multimodal completion backends.

Every model call in the system goes through the single ``Gateway.complete``
choke point: it owns retries, strict-JSON validation with one bounded repair
re-prompt, and latency accounting. Backends are pluggable; the scripted mock
makes every pipeline in this repository bit-reproducible offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Protocol

import httpx

API_KEY_ENV = "GEOSKILL_API_KEY"
DEFAULT_MAX_RETRIES = 2
DEFAULT_BACKOFF_S = 0.2


class ModelAlias(str, Enum):
    ONLINE_INFERENCE = "online"
    OFFLINE_REFINEMENT = "offline"


class ResponseFormat(str, Enum):
    FREE_TEXT = "free_text"
    STRICT_JSON = "strict_json"


@dataclass(frozen=True)
class Message:
    role: str
    text: str
    images: tuple[str, ...] = ()  # URLs or base64 data parts


@dataclass(frozen=True)
class ModelRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.2
    response_format: ResponseFormat = ResponseFormat.FREE_TEXT
    max_output_tokens: int | None = None
    model_alias: ModelAlias = ModelAlias.ONLINE_INFERENCE

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("request needs at least one message")
        if not (0.0 <= self.temperature <= 2.0):
            raise ValueError(f"temperature out of range: {self.temperature}")


@dataclass(frozen=True)
class ModelResponse:
    text: str
    finish_reason: str
    latency_ms: float
    backend: str


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """Transient transport failure (retryable)."""


class AuthenticationError(GatewayError):
    pass


class GatewayTimeout(GatewayError):
    pass


class MalformedJsonError(GatewayError):
    """Strict-JSON response still unparseable after the repair re-prompt."""


class UnscriptedRequestError(GatewayError):
    """The mock backend received a request its script does not cover."""


class ScriptError(GatewayError):
    """The mock script file could not be parsed."""


class Backend(Protocol):
    name: str

    def send(self, request: ModelRequest) -> str: ...


def request_fingerprint(messages: tuple[Message, ...]) -> str:
    """Stable hash of a message list; images fold in as opaque digests."""
    canonical = [
        {
            "role": m.role,
            "text": m.text,
            "images": [
                hashlib.sha256(img.encode("utf-8")).hexdigest()[:12] for img in m.images
            ],
        }
        for m in messages
    ]
    blob = json.dumps(canonical, ensure_ascii=False, separators=(",", ":"), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class MockBackend:
    """Deterministic scripted backend.

    Scripts are JSON files of one of two shapes:
      {"mode": "ordinal", "responses": ["first reply", "second reply", ...]}
      {"mode": "fingerprint", "responses": {"<fingerprint>": "reply", ...}}
    An unmatched request raises, never silently defaults.
    """

    def __init__(self, script: Mapping | None = None, name: str = "mock"):
        self.name = name
        self._lock = threading.Lock()
        self._cursor = 0
        script = dict(script or {"mode": "ordinal", "responses": []})
        mode = script.get("mode")
        if mode not in ("ordinal", "fingerprint"):
            raise ScriptError(f"unknown mock script mode: {mode!r}")
        self.mode = mode
        self.responses = script.get("responses")
        if mode == "ordinal" and not isinstance(self.responses, list):
            raise ScriptError("ordinal script needs a response list")
        if mode == "fingerprint" and not isinstance(self.responses, dict):
            raise ScriptError("fingerprint script needs a fingerprint -> response map")

    @classmethod
    def from_file(cls, path: str | Path, name: str = "mock") -> "MockBackend":
        try:
            script = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ScriptError(f"cannot load mock script {path}: {exc}") from exc
        return cls(script, name=name)

    def send(self, request: ModelRequest) -> str:
        if self.mode == "fingerprint":
            fp = request_fingerprint(request.messages)
            if fp not in self.responses:
                raise UnscriptedRequestError(f"unscripted request fingerprint: {fp}")
            return self.responses[fp]
        with self._lock:
            if self._cursor >= len(self.responses):
                fp = request_fingerprint(request.messages)
                raise UnscriptedRequestError(
                    f"ordinal script exhausted at call {self._cursor}; fingerprint {fp}"
                )
            text = self.responses[self._cursor]
            self._cursor += 1
        return text


class _TokenBucket:
    def __init__(self, rate_per_s: float, capacity: float | None = None):
        self.rate = rate_per_s
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_s)
        self._tokens = self.capacity
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


class HttpBackend:
    """Chat-completions-style JSON-over-HTTP backend with bearer auth taken
    from the GEOSKILL_API_KEY environment variable."""

    def __init__(
        self,
        url: str,
        model_name: str,
        timeout_s: float = 30.0,
        name: str = "http",
        rate_per_s: float | None = None,
    ):
        self.url = url
        self.model_name = model_name
        self.timeout_s = timeout_s
        self.name = name
        self._bucket = _TokenBucket(rate_per_s) if rate_per_s else None

    @staticmethod
    def _wire_messages(messages: tuple[Message, ...]) -> list[dict]:
        wire = []
        for m in messages:
            if m.images:
                content: list[dict] | str = [{"type": "text", "text": m.text}]
                content.extend(
                    {"type": "image_url", "image_url": {"url": img}} for img in m.images
                )
            else:
                content = m.text
            wire.append({"role": m.role, "content": content})
        return wire

    def send(self, request: ModelRequest) -> str:
        if self._bucket is not None:
            self._bucket.acquire()
        body: dict = {
            "model": self.model_name,
            "messages": self._wire_messages(request.messages),
            "temperature": request.temperature,
        }
        if request.response_format is ResponseFormat.STRICT_JSON:
            body["response_format"] = {"type": "json_object"}
        if request.max_output_tokens is not None:
            body["max_tokens"] = request.max_output_tokens
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = httpx.post(self.url, json=body, headers=headers, timeout=self.timeout_s)
        except httpx.TimeoutException as exc:
            raise GatewayTimeout(f"{self.name}: timeout after {self.timeout_s}s") from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"{self.name}: transport failure: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthenticationError(f"{self.name}: authentication failed ({response.status_code})")
        if response.status_code >= 500 or response.status_code == 429:
            raise TransportError(f"{self.name}: server error {response.status_code}")
        if response.status_code >= 400:
            raise GatewayError(f"{self.name}: request rejected {response.status_code}: {response.text[:200]}")
        try:
            payload = response.json()
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
            raise GatewayError(f"{self.name}: malformed completion payload: {exc}") from exc


_REPAIR_PROMPT = (
    "Your previous reply was not valid JSON. Reply again with exactly the "
    "same content as a single well-formed JSON object and nothing else."
)


class Gateway:
    """Routes requests to the backend configured for their model alias and
    enforces the response contract."""

    def __init__(
        self,
        backends: Mapping[ModelAlias, Backend],
        max_retries: int | Mapping[ModelAlias, int] = DEFAULT_MAX_RETRIES,
        backoff_s: float = DEFAULT_BACKOFF_S,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        self._backends = dict(backends)
        self._max_retries = max_retries
        self._backoff_s = backoff_s
        self._sleep = sleep
        self._clock = clock

    def _retries_for(self, alias: ModelAlias) -> int:
        if isinstance(self._max_retries, int):
            return self._max_retries
        return self._max_retries.get(alias, DEFAULT_MAX_RETRIES)

    def _send_with_retry(self, backend: Backend, request: ModelRequest) -> tuple[str, float]:
        retries = self._retries_for(request.model_alias)
        attempt = 0
        while True:
            start = self._clock()
            try:
                text = backend.send(request)
                return text, (self._clock() - start) * 1000.0
            except (TransportError, GatewayTimeout):
                if attempt >= retries:
                    raise
                self._sleep(self._backoff_s * (2**attempt))
                attempt += 1

    def complete(self, request: ModelRequest) -> ModelResponse:
        backend = self._backends.get(request.model_alias)
        if backend is None:
            raise GatewayError(f"no backend configured for alias {request.model_alias.value!r}")
        text, latency = self._send_with_retry(backend, request)
        if request.response_format is ResponseFormat.STRICT_JSON:
            if not _is_json(text):
                repair = replace(
                    request,
                    messages=request.messages
                    + (
                        Message("assistant", text),
                        Message("user", _REPAIR_PROMPT),
                    ),
                )
                text, extra = self._send_with_retry(backend, repair)
                latency += extra
                if not _is_json(text):
                    raise MalformedJsonError(
                        f"{backend.name}: strict-JSON response unparseable after repair"
                    )
        return ModelResponse(
            text=text, finish_reason="stop", latency_ms=latency, backend=backend.name
        )


def _is_json(text: str) -> bool:
    try:
        json.loads(text)
        return True
    except (json.JSONDecodeError, TypeError):
        return False


def mock_backend(script_file: str | Path) -> MockBackend:
    """Load a deterministic scripted backend from a script file."""
    return MockBackend.from_file(script_file)
