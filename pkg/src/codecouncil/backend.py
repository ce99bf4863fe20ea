"""Completion backends with exact usage accounting.

Two implementations share one interface: a networked chat-completion client
and a deterministic scripted backend that replays pre-authored responses
(the oracle for every pipeline-trace test). Every successful call lands in
the owning backend's usage ledger.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import requests

from .core import Stage
from .errors import ConfigError, NetworkError, ProtocolError, ScriptExhausted, ScriptMismatch

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "CODECOUNCIL_ENDPOINT"
MODEL_ENV = "CODECOUNCIL_MODEL"
TOKEN_ENV = "CODECOUNCIL_AUTH_TOKEN"

#: HTTP statuses treated as transient and therefore retried.
RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class UsageSource(Enum):
    REPORTED = "reported"
    ESTIMATED = "estimated"


def estimate_tokens(text: str) -> int:
    """Deterministic fallback when an endpoint reports no usage: ceil(chars / 4)."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class CompletionRequest:
    system_text: str
    user_text: str
    stage: Stage
    temperature: float = 0.0
    max_output_tokens: int = 2048

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_output_tokens < 1:
            raise ValueError(f"max_output_tokens must be >= 1, got {self.max_output_tokens}")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    usage_source: UsageSource

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("usage counters must be non-negative")


@dataclass(frozen=True)
class StageUsage:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class UsageLedger:
    """Point-in-time snapshot; totals always equal the per-stage sums."""

    total_calls: int
    total_prompt_tokens: int
    total_completion_tokens: int
    per_stage: Mapping[Stage, StageUsage]

    def stage_calls(self, stage: Stage) -> int:
        usage = self.per_stage.get(stage)
        return usage.calls if usage else 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "total_calls": self.total_calls,
            "total_prompt_tokens": self.total_prompt_tokens,
            "total_completion_tokens": self.total_completion_tokens,
            "per_stage": {
                stage.value: {
                    "calls": usage.calls,
                    "prompt_tokens": usage.prompt_tokens,
                    "completion_tokens": usage.completion_tokens,
                }
                for stage, usage in self.per_stage.items()
            },
        }


class _LedgerAccumulator:
    """Append-only per-stage counters behind a lock; snapshots are consistent."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._stages: dict[Stage, list[int]] = {}

    def record(self, stage: Stage, prompt_tokens: int, completion_tokens: int) -> None:
        with self._lock:
            counters = self._stages.setdefault(stage, [0, 0, 0])
            counters[0] += 1
            counters[1] += prompt_tokens
            counters[2] += completion_tokens

    def snapshot(self) -> UsageLedger:
        with self._lock:
            per_stage = {
                stage: StageUsage(calls, prompt, completion)
                for stage, (calls, prompt, completion) in self._stages.items()
            }
        return UsageLedger(
            total_calls=sum(usage.calls for usage in per_stage.values()),
            total_prompt_tokens=sum(usage.prompt_tokens for usage in per_stage.values()),
            total_completion_tokens=sum(usage.completion_tokens for usage in per_stage.values()),
            per_stage=per_stage,
        )


class Backend(ABC):
    """A completion source. ``complete`` appends exactly one ledger entry per success."""

    def __init__(self) -> None:
        self._ledger = _LedgerAccumulator()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        response = self._do_complete(request)
        self._ledger.record(request.stage, response.prompt_tokens, response.completion_tokens)
        return response

    @abstractmethod
    def _do_complete(self, request: CompletionRequest) -> CompletionResponse:
        ...

    def snapshot_ledger(self) -> UsageLedger:
        return self._ledger.snapshot()


@dataclass(frozen=True)
class ScriptEntry:
    """One pre-authored response. ``match`` pins the entry to a stage when set."""

    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    match: Stage | None = None


def parse_script(data: Iterable[Mapping[str, Any]]) -> list[ScriptEntry]:
    """Parse the script file format: a JSON array of {match?, text, prompt_tokens?, completion_tokens?}."""
    entries = []
    for index, item in enumerate(data):
        if not isinstance(item, Mapping) or "text" not in item:
            raise ConfigError(f"script entry {index} must be an object with a 'text' field")
        match = item.get("match")
        entries.append(
            ScriptEntry(
                text=item["text"],
                prompt_tokens=item.get("prompt_tokens"),
                completion_tokens=item.get("completion_tokens"),
                match=Stage(match) if match is not None else None,
            )
        )
    return entries


def load_script(path: str | Path) -> list[ScriptEntry]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read script file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"script file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise ConfigError(f"script file {path} must hold a JSON array of entries")
    return parse_script(data)


class ScriptedBackend(Backend):
    """Serves a fixed response sequence in order; deterministic and offline.

    Calls are serialized internally so the script order is preserved even
    under concurrent invocation.
    """

    def __init__(self, script: Sequence[ScriptEntry | Mapping[str, Any]]):
        if not script:
            raise ValueError("script must be non-empty")
        super().__init__()
        self._entries = [
            entry if isinstance(entry, ScriptEntry) else parse_script([entry])[0] for entry in script
        ]
        self._cursor = 0
        self._serial = threading.Lock()

    def _do_complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._serial:
            if self._cursor >= len(self._entries):
                raise ScriptExhausted(
                    f"script exhausted after {len(self._entries)} responses "
                    f"(next request stage: {request.stage.value})"
                )
            entry = self._entries[self._cursor]
            if entry.match is not None and entry.match is not request.stage:
                raise ScriptMismatch(
                    f"script entry {self._cursor} is tagged {entry.match.value}, "
                    f"but the request stage is {request.stage.value}"
                )
            self._cursor += 1
        if entry.prompt_tokens is None or entry.completion_tokens is None:
            return CompletionResponse(
                text=entry.text,
                prompt_tokens=estimate_tokens(request.system_text + request.user_text),
                completion_tokens=estimate_tokens(entry.text),
                usage_source=UsageSource.ESTIMATED,
            )
        return CompletionResponse(
            text=entry.text,
            prompt_tokens=entry.prompt_tokens,
            completion_tokens=entry.completion_tokens,
            usage_source=UsageSource.REPORTED,
        )

    @property
    def remaining(self) -> int:
        with self._serial:
            return len(self._entries) - self._cursor


class HttpBackend(Backend):
    """Chat-completion client over the standard JSON wire protocol.

    One POST per ``complete`` call; transient transport failures (connection
    errors, timeouts, 429/5xx) are retried with exponential backoff. Retried
    transports are not ledger entries -- only completed calls count.
    """

    def __init__(
        self,
        endpoint_url: str,
        model_name: str,
        auth_token: str | None = None,
        *,
        retries: int = 3,
        backoff: float = 0.5,
        request_timeout: float = 120.0,
    ):
        if not endpoint_url:
            raise ConfigError("endpoint_url must be non-empty")
        if not model_name:
            raise ConfigError("model_name must be non-empty")
        super().__init__()
        self._url = endpoint_url
        self._model = model_name
        self._token = auth_token
        self._retries = retries
        self._backoff = backoff
        self._request_timeout = request_timeout

    def _do_complete(self, request: CompletionRequest) -> CompletionResponse:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        payload = {
            "model": self._model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"

        last_error: Exception | None = None
        for attempt in range(self._retries + 1):
            if attempt:
                time.sleep(self._backoff * 2 ** (attempt - 1))
            try:
                raw = requests.post(self._url, json=payload, headers=headers, timeout=self._request_timeout)
            except requests.RequestException as exc:
                last_error = exc
                logger.debug("transport failure on attempt %d: %s", attempt + 1, exc)
                continue
            if raw.status_code in RETRYABLE_STATUSES:
                last_error = NetworkError(f"HTTP {raw.status_code} from {self._url}")
                logger.debug("retryable status %d on attempt %d", raw.status_code, attempt + 1)
                continue
            if raw.status_code >= 400:
                raise ProtocolError(f"HTTP {raw.status_code} from {self._url}: {raw.text[:200]}")
            return self._parse_body(request, raw)
        raise NetworkError(f"request failed after {self._retries + 1} attempts: {last_error}")

    def _parse_body(self, request: CompletionRequest, raw: requests.Response) -> CompletionResponse:
        try:
            body = raw.json()
        except ValueError as exc:
            raise ProtocolError(f"response body is not JSON: {raw.text[:200]}") from exc
        choices = body.get("choices") if isinstance(body, dict) else None
        if not choices:
            raise ProtocolError("response has no choices")
        message = choices[0].get("message") if isinstance(choices[0], dict) else None
        text = message.get("content") if isinstance(message, dict) else None
        if not isinstance(text, str):
            raise ProtocolError("choice 0 carries no message content")

        usage = body.get("usage")
        if (
            isinstance(usage, dict)
            and isinstance(usage.get("prompt_tokens"), int)
            and isinstance(usage.get("completion_tokens"), int)
        ):
            return CompletionResponse(
                text=text,
                prompt_tokens=usage["prompt_tokens"],
                completion_tokens=usage["completion_tokens"],
                usage_source=UsageSource.REPORTED,
            )
        return CompletionResponse(
            text=text,
            prompt_tokens=estimate_tokens(request.system_text + request.user_text),
            completion_tokens=estimate_tokens(text),
            usage_source=UsageSource.ESTIMATED,
        )


class RecordingBackend(Backend):
    """Forwards to another backend while keeping a private ledger and the
    ordered stage sequence. Used for exact per-problem accounting even when
    the inner backend is shared across concurrent pipelines."""

    def __init__(self, inner: Backend):
        super().__init__()
        self._inner = inner
        self._calls: list[Stage] = []
        self._calls_lock = threading.Lock()

    def _do_complete(self, request: CompletionRequest) -> CompletionResponse:
        response = self._inner.complete(request)
        with self._calls_lock:
            self._calls.append(request.stage)
        return response

    @property
    def call_sequence(self) -> tuple[Stage, ...]:
        with self._calls_lock:
            return tuple(self._calls)


def scripted_backend(script: Sequence[ScriptEntry | Mapping[str, Any]] | str | Path) -> ScriptedBackend:
    """Build a scripted backend from entries, dicts, or a script file path."""
    if isinstance(script, (str, Path)):
        return ScriptedBackend(load_script(script))
    return ScriptedBackend(script)


def http_backend(
    endpoint_url: str | None = None,
    model_name: str | None = None,
    auth_token: str | None = None,
    **kwargs: Any,
) -> HttpBackend:
    """Build an HTTP backend; unset arguments fall back to environment variables."""
    url = endpoint_url or os.environ.get(ENDPOINT_ENV)
    model = model_name or os.environ.get(MODEL_ENV)
    token = auth_token if auth_token is not None else os.environ.get(TOKEN_ENV)
    if not url:
        raise ConfigError(f"no endpoint URL: pass one or set {ENDPOINT_ENV}")
    if not model:
        raise ConfigError(f"no model name: pass one or set {MODEL_ENV}")
    return HttpBackend(url, model, token, **kwargs)
