"""Chat-completion transport: a remote HTTP backend and a deterministic mock.

Every request is a single user message; no conversational state is carried
between prompts, so nothing from one interview can reach another's request.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from .errors import MadrsError

log = logging.getLogger(__name__)

API_KEY_ENV = ("MADRS_LLM_API_KEY", "OPENAI_API_KEY")
RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


class LlmError(MadrsError):
    """Base class for transport-level failures of a single request."""


class ContextOverflow(LlmError):
    def __init__(self, estimated: int, limit: int):
        self.estimated = estimated
        self.limit = limit
        super().__init__(f"prompt needs ~{estimated} tokens, context limit is {limit}")


class TransportError(LlmError):
    def __init__(self, message: str, attempts: int):
        self.attempts = attempts
        super().__init__(f"{message} (after {attempts} attempts)")


class EndpointError(LlmError):
    def __init__(self, status: int, body: str):
        self.status = status
        super().__init__(f"endpoint returned HTTP {status}: {body[:200]}")


def estimate_tokens(prompt: str) -> int:
    """Characters / 4, rounded up."""
    return math.ceil(len(prompt) / 4)


@dataclass(frozen=True)
class LlmConfig:
    endpoint_url: str = "http://localhost:8000"
    model_name: str = "qwen2.5-72b-instruct"
    temperature: float = 0.0
    max_output_tokens: int = 1024
    max_context_tokens: int = 128_000
    request_timeout: float = 120.0
    max_retries: int = 3
    max_in_flight: int = 4
    backoff_base: float = 1.0
    backoff_cap: float = 30.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_output_tokens < 1 or self.max_context_tokens < 1:
            raise ValueError("token limits must be positive")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency: float
    attempt: int


class AuditLog:
    """Append-only JSONL record of requests (hash, latency, attempt, tokens)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def write(self, prompt: str, seed: int | None, response: LlmResponse | None, error: str | None = None):
        rec = {
            "prompt_sha256": hashlib.sha256(prompt.encode("utf-8")).hexdigest(),
            "seed": seed,
            "latency": None if response is None else round(response.latency, 6),
            "attempt": None if response is None else response.attempt,
            "prompt_tokens": None if response is None else response.prompt_tokens,
            "completion_tokens": None if response is None else response.completion_tokens,
            "error": error,
        }
        line = json.dumps(rec) + "\n"
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line)


class Backend(Protocol):
    max_context_tokens: int
    max_in_flight: int

    def complete(self, prompt: str, seed: int | None = None) -> LlmResponse: ...


class _BaseBackend:
    max_context_tokens: int
    max_in_flight: int
    audit: AuditLog | None = None

    def _gate(self, prompt: str) -> None:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        est = estimate_tokens(prompt)
        if est > self.max_context_tokens:
            raise ContextOverflow(est, self.max_context_tokens)

    def complete(self, prompt: str, seed: int | None = None) -> LlmResponse:
        self._gate(prompt)
        try:
            response = self._send(prompt, seed)
        except LlmError as exc:
            if self.audit:
                self.audit.write(prompt, seed, None, error=str(exc))
            raise
        if self.audit:
            self.audit.write(prompt, seed, response)
        return response

    def _send(self, prompt: str, seed: int | None) -> LlmResponse:  # pragma: no cover
        raise NotImplementedError


class RemoteBackend(_BaseBackend):
    """OpenAI-compatible ``/v1/chat/completions`` endpoint."""

    def __init__(
        self,
        config: LlmConfig,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        audit: AuditLog | None = None,
    ):
        self.config = config
        self.max_context_tokens = config.max_context_tokens
        self.max_in_flight = config.max_in_flight
        self.audit = audit
        self._sleep = sleep
        if api_key is None:
            api_key = next((os.environ[k] for k in API_KEY_ENV if os.environ.get(k)), None)
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            base_url=config.endpoint_url.rstrip("/"),
            headers=headers,
            timeout=config.request_timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def _body(self, prompt: str, seed: int | None) -> dict:
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        }
        if seed is not None:
            body["seed"] = seed
        return body

    def _backoff(self, attempt: int) -> float:
        return min(self.config.backoff_cap, self.config.backoff_base * 2 ** (attempt - 1))

    def _send(self, prompt: str, seed: int | None) -> LlmResponse:
        body = self._body(prompt, seed)
        attempts = self.config.max_retries + 1
        last = "no attempt made"
        for attempt in range(1, attempts + 1):
            start = time.perf_counter()
            try:
                resp = self._client.post("/v1/chat/completions", json=body)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse(resp, time.perf_counter() - start, attempt, prompt)
                if resp.status_code not in RETRYABLE_STATUS:
                    raise EndpointError(resp.status_code, resp.text)
                last = f"HTTP {resp.status_code}"
            if attempt < attempts:
                delay = self._backoff(attempt)
                log.warning("request failed (%s); retry %d/%d in %.1fs",
                            last, attempt, self.config.max_retries, delay)
                self._sleep(delay)
        raise TransportError(last, attempts)

    @staticmethod
    def _parse(resp: httpx.Response, latency: float, attempt: int, prompt: str) -> LlmResponse:
        try:
            doc = resp.json()
            text = doc["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError):
            raise EndpointError(resp.status_code, f"unexpected response body: {resp.text}") from None
        usage = doc.get("usage") or {}
        return LlmResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", estimate_tokens(prompt))),
            completion_tokens=int(usage.get("completion_tokens", estimate_tokens(text))),
            latency=latency,
            attempt=attempt,
        )


MockPolicy = Callable[[str, int], str]


@dataclass(frozen=True)
class RequestRecord:
    prompt: str
    seed: int
    started: float
    finished: float


def echo_rating_policy(prompt: str, seed: int) -> str:
    """Trivial mock policy: a well-formed answer whose rating is derived from the hash."""
    rating = int(hashlib.sha256(f"{seed}:{prompt}".encode()).hexdigest(), 16) % 7
    return (
        f"Rating: {rating}\n"
        "Explanation: Mock response.\n"
        "Key Utterances: none\n"
        "Most Relevant Question: none"
    )


class MockBackend(_BaseBackend):
    """In-process backend whose output is a pure function of ``(prompt, seed)``.

    Requests are appended to ``request_log`` (under a lock) so tests can
    inspect exactly what was sent.
    """

    def __init__(
        self,
        policy: MockPolicy = echo_rating_policy,
        seed: int = 0,
        max_context_tokens: int = 128_000,
        max_in_flight: int = 4,
        audit: AuditLog | None = None,
        model_name: str = "mock",
    ):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.policy = policy
        self.seed = seed
        self.max_context_tokens = max_context_tokens
        self.max_in_flight = max_in_flight
        self.audit = audit
        self.model_name = model_name
        self.request_log: list[RequestRecord] = []
        self._lock = threading.Lock()

    def _send(self, prompt: str, seed: int | None) -> LlmResponse:
        effective = self.seed if seed is None else seed
        started = time.perf_counter()
        text = self.policy(prompt, effective)
        finished = time.perf_counter()
        with self._lock:
            self.request_log.append(RequestRecord(prompt, effective, started, finished))
        return LlmResponse(
            text=text,
            prompt_tokens=estimate_tokens(prompt),
            completion_tokens=estimate_tokens(text),
            latency=finished - started,
            attempt=1,
        )


def complete(backend: Backend, prompt: str, seed: int | None = None) -> LlmResponse:
    return backend.complete(prompt, seed)


def run_batch(
    backend: Backend,
    prompts: Sequence[str],
    seeds: Sequence[int | None] | None = None,
) -> list[LlmResponse | Exception]:
    """Send independent prompts, at most ``backend.max_in_flight`` at a time.

    Results are aligned with ``prompts``; a failing prompt yields its
    exception object in place of a response.
    """
    if not prompts:
        raise ValueError("prompts must be non-empty")
    if seeds is None:
        seeds = [None] * len(prompts)
    if len(seeds) != len(prompts):
        raise ValueError("seeds must align with prompts")

    def one(i: int) -> LlmResponse | Exception:
        try:
            return backend.complete(prompts[i], seeds[i])
        except Exception as exc:  # failures stay with their prompt
            return exc

    with ThreadPoolExecutor(max_workers=backend.max_in_flight) as pool:
        return list(pool.map(one, range(len(prompts))))


def backend_name(backend: Backend) -> str:
    if isinstance(backend, RemoteBackend):
        return backend.config.model_name
    return getattr(backend, "model_name", type(backend).__name__)
