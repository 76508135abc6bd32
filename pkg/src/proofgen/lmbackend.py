"""Language-model backends behind a single sampling interface.

``MockBackend`` draws from scripted continuation tables keyed by prompt
suffix, with exact temperature semantics and per-call-site seeded RNG
streams so results are independent of call order.  ``RemoteBackend`` is a
thin client for an OpenAI-style completions endpoint with retry/backoff.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)


class BackendError(Exception):
    pass


class BackendTransportError(BackendError):
    """Transport-level failure after exhausting retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class BackendAuthError(BackendError):
    """Authentication/authorization failure; never retried."""


class UnscriptedPromptError(BackendError):
    """The mock script has no table whose key is a suffix of the prompt."""


class TruncationReason(str, Enum):
    STOP = "stop"
    MAX_TOKENS = "max_tokens"
    END = "end"


@dataclass(frozen=True)
class SampleRequest:
    prompt: str
    temperature: float
    n: int = 1
    max_tokens: int = 1024
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class SampleResult:
    text: str
    logprob: float
    token_count: int
    truncated_by: TruncationReason


@dataclass
class BackendCounters:
    sample_calls: int = 0
    samples_returned: int = 0
    tokens_generated: int = 0


class Backend(Protocol):
    counters: BackendCounters

    def sample(self, request: SampleRequest, *, stream_key: tuple = ()) -> list[SampleResult]: ...

    def count_tokens(self, text: str) -> int: ...


def derive_stream_seed(seed: int, stream_key: tuple, prompt: str, temperature: float) -> int:
    """Stable per-call-site RNG seed; identical inputs give identical draws
    regardless of call order or process."""
    material = repr((seed, tuple(stream_key), prompt, float(temperature))).encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


_PIECE_RE = re.compile(r"\S+")


def _truncate(text: str, stop_sequences: Sequence[str], max_tokens: int) -> tuple[str, TruncationReason]:
    """Cut at the earliest stop sequence or the whitespace-token budget,
    whichever comes first."""
    cut = len(text)
    reason = TruncationReason.END
    for stop in stop_sequences:
        if not stop:
            continue
        pos = text.find(stop)
        if pos != -1 and pos < cut:
            cut, reason = pos, TruncationReason.STOP
    candidate = text[:cut]
    spans = _PIECE_RE.findall(candidate)
    if len(spans) > max_tokens:
        end = list(_PIECE_RE.finditer(candidate))[max_tokens - 1].end()
        return candidate[:end], TruncationReason.MAX_TOKENS
    return candidate, reason


class MockBackend:
    """Deterministic scripted backend.

    ``script`` maps a prompt-suffix pattern to a weighted continuation table
    ``[(text, weight), ...]``.  Sampling uses the table whose key is the
    longest suffix of the prompt.  Weights are normalized to probabilities;
    temperature rescales them as p_i**(1/tau) renormalized; tau=0 picks the
    argmax with lexicographic tie-break on the text.  The reported logprob is
    always ln of the chosen continuation's base normalized weight, and mock
    token counts are whitespace piece counts.
    """

    def __init__(self, script: Mapping[str, Sequence[tuple[str, float]]], seed: int = 0):
        if not script:
            raise ValueError("mock script must contain at least one table")
        self._script: dict[str, tuple[tuple[str, float], ...]] = {}
        for key, table in script.items():
            entries = tuple((str(t), float(w)) for t, w in table)
            if not entries:
                raise ValueError(f"mock table for {key!r} is empty")
            if any(w <= 0 for _, w in entries):
                raise ValueError(f"mock table for {key!r} has non-positive weights")
            self._script[key] = entries
        self.seed = seed
        self.counters = BackendCounters()
        self._lock = threading.Lock()

    def count_tokens(self, text: str) -> int:
        return len(text.split())

    def _lookup(self, prompt: str) -> tuple[tuple[str, float], ...]:
        best_key: str | None = None
        for key in self._script:
            if prompt.endswith(key) and (best_key is None or len(key) > len(best_key)):
                best_key = key
        if best_key is None:
            tail = prompt[-80:].replace("\n", "\\n")
            raise UnscriptedPromptError(f"no scripted table matches prompt suffix ...{tail!r}")
        return self._script[best_key]

    def sample(self, request: SampleRequest, *, stream_key: tuple = ()) -> list[SampleResult]:
        table = self._lookup(request.prompt)
        total = sum(w for _, w in table)
        base = [w / total for _, w in table]
        if request.temperature == 0.0:
            top = max(base)
            # Lexicographic tie-break on the continuation text.
            tied = [i for i, p in enumerate(base) if p == top]
            choice = min(tied, key=lambda i: table[i][0])
            indices = [choice] * request.n
        else:
            scaled = [p ** (1.0 / request.temperature) for p in base]
            z = sum(scaled)
            probs = [s / z for s in scaled]
            rng = random.Random(derive_stream_seed(self.seed, stream_key, request.prompt, request.temperature))
            indices = []
            for _ in range(request.n):
                r = rng.random()
                acc = 0.0
                pick = len(probs) - 1
                for i, p in enumerate(probs):
                    acc += p
                    if r < acc:
                        pick = i
                        break
                indices.append(pick)
        results = []
        for i in indices:
            text, reason = _truncate(table[i][0], request.stop_sequences, request.max_tokens)
            results.append(
                SampleResult(
                    text=text,
                    logprob=math.log(base[i]),
                    token_count=self.count_tokens(text),
                    truncated_by=reason,
                )
            )
        with self._lock:
            self.counters.sample_calls += 1
            self.counters.samples_returned += len(results)
            self.counters.tokens_generated += sum(r.token_count for r in results)
        return results


def configure_mock(script: Mapping[str, Sequence[tuple[str, float]]], seed: int = 0) -> MockBackend:
    return MockBackend(script, seed)


_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}
_TERMINAL_STATUS = {401, 402, 403}


class RemoteBackend:
    """Client for an OpenAI-style completions endpoint.

    Transport failures and retryable status codes back off and retry up to
    ``max_retries`` before raising BackendTransportError; auth/quota codes
    raise BackendAuthError immediately.  Cost counters only reflect
    successful responses.  ``count_table`` supplies recorded exact token
    counts (whitespace pieces as fallback).
    """

    def __init__(
        self,
        url: str,
        model: str,
        api_key: str | None = None,
        *,
        max_retries: int = 3,
        retry_backoff: float = 0.5,
        timeout: float = 60.0,
        count_table: Mapping[str, int] | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.max_retries = max_retries
        self.retry_backoff = retry_backoff
        self.count_table = dict(count_table or {})
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep
        self.counters = BackendCounters()

    def count_tokens(self, text: str) -> int:
        if text in self.count_table:
            return self.count_table[text]
        return len(text.split())

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def sample(self, request: SampleRequest, *, stream_key: tuple = ()) -> list[SampleResult]:
        payload: dict = {
            "model": self.model,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "n": request.n,
            "max_tokens": request.max_tokens,
            "logprobs": 0,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        last_error: str = "transport failure"
        for attempt in range(1, self.max_retries + 1):
            try:
                resp = self._client.post(self.url, json=payload, headers=self._headers())
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                if attempt < self.max_retries:
                    self._sleep(self.retry_backoff * 2 ** (attempt - 1))
                continue
            if resp.status_code in _TERMINAL_STATUS:
                raise BackendAuthError(f"endpoint returned {resp.status_code}: {resp.text[:200]}")
            if resp.status_code in _RETRYABLE_STATUS:
                last_error = f"endpoint returned {resp.status_code}"
                if attempt < self.max_retries:
                    self._sleep(self.retry_backoff * 2 ** (attempt - 1))
                continue
            if resp.status_code != 200:
                raise BackendError(f"endpoint returned {resp.status_code}: {resp.text[:200]}")
            return self._parse(resp.json())
        raise BackendTransportError(last_error, attempts=self.max_retries)

    def _parse(self, body: dict) -> list[SampleResult]:
        results = []
        for choice in body.get("choices", []):
            text = choice.get("text", "")
            logprobs = (choice.get("logprobs") or {}).get("token_logprobs") or []
            logprob = float(sum(lp for lp in logprobs if lp is not None))
            if logprob > 0:
                logger.warning("endpoint reported a positive sequence logprob: %s", logprob)
            token_count = len(logprobs) if logprobs else self.count_tokens(text)
            finish = choice.get("finish_reason")
            if finish == "length":
                reason = TruncationReason.MAX_TOKENS
            elif finish == "stop":
                reason = TruncationReason.STOP
            else:
                reason = TruncationReason.END
            results.append(SampleResult(text, logprob, token_count, reason))
        self.counters.sample_calls += 1
        self.counters.samples_returned += len(results)
        self.counters.tokens_generated += sum(r.token_count for r in results)
        return results


class TokenBucket:
    """Blocking rate limiter: at most ``max_in_flight`` concurrent holders
    and ``per_minute`` acquisitions per rolling minute."""

    def __init__(
        self,
        per_minute: int,
        max_in_flight: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if per_minute < 1 or max_in_flight < 1:
            raise ValueError("per_minute and max_in_flight must be positive")
        self.per_minute = per_minute
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._tokens = float(per_minute)
        self._last = clock()

    def _refill(self) -> None:
        now = self._clock()
        self._tokens = min(self.per_minute, self._tokens + (now - self._last) * self.per_minute / 60.0)
        self._last = now

    def acquire(self) -> None:
        self._sem.acquire()
        while True:
            with self._lock:
                self._refill()
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) * 60.0 / self.per_minute
            self._sleep(wait)

    def release(self) -> None:
        self._sem.release()


class RateLimitedBackend:
    """Wrap a backend so every sample call passes through a TokenBucket."""

    def __init__(self, backend: Backend, bucket: TokenBucket):
        self._backend = backend
        self._bucket = bucket

    @property
    def counters(self) -> BackendCounters:
        return self._backend.counters

    def count_tokens(self, text: str) -> int:
        return self._backend.count_tokens(text)

    def sample(self, request: SampleRequest, *, stream_key: tuple = ()) -> list[SampleResult]:
        self._bucket.acquire()
        try:
            return self._backend.sample(request, stream_key=stream_key)
        finally:
            self._bucket.release()
