"""Model backends: chat completion, embedding and usefulness judging.

Two implementations share one protocol. ``MockBackend`` is bit-deterministic
(integer hashing only, no floats until the final normalize) so that any two
processes with the same config produce identical bytes; ``HttpBackend``
speaks the OpenAI-compatible REST shape. Both are safe to share across
threads.
"""

from __future__ import annotations

import logging
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from .errors import (
    BackendUnavailable,
    EmptyResponse,
    JudgeParseFailure,
    ZeroVector,
)
from .model import Message

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

API_KEY_ENV = "MASSCOPE_API_KEY"

# The judge must answer with exactly one of these two tokens; anything else
# triggers one re-ask and then JudgeParseFailure.
JUDGE_SYSTEM_PROMPT = (
    "You are grading the usefulness of one incoming message for an agent "
    "inside a multi-agent system. You will see the task, the agent's role, "
    "and the message the agent received. Decide whether the message helped "
    "the agent produce a better contribution to the task. Reply with exactly "
    "one token: USEFUL or NOT_USEFUL. No other words."
)

JUDGE_USER_TEMPLATE = (
    "Task:\n{query}\n\nAgent role:\n{role_prompt}\n\n"
    "Message received:\n{message}\n\nVerdict (USEFUL or NOT_USEFUL):"
)


def fnv1a64(data: str | bytes) -> int:
    """64-bit FNV-1a over UTF-8 bytes."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def _splitmix64(state: int) -> tuple[int, int]:
    """One step of SplitMix64; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


@dataclass(frozen=True)
class EmbeddingVector:
    """Unit-norm embedding; cosine reduces to a dot product."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    base_url: str | None = None
    chat_model: str = ""
    embed_model: str = ""
    judge_model: str = ""
    timeout: float = 30.0
    max_retries: int = 3
    seed: int = 0
    embed_dim: int = 32
    max_inflight: int = 8

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "http"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and not self.base_url:
            raise ValueError("http backend requires base_url")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be positive")


class Backend(Protocol):
    def complete(self, role_prompt: str, query: str, inputs: Sequence[Message]) -> str:
        ...

    def embed(self, text: str) -> EmbeddingVector:
        ...

    def judge_usefulness(self, query: str, role_prompt: str, message: str) -> int:
        ...


def _require_nonempty(**named: str) -> None:
    for name, value in named.items():
        if not value:
            raise ValueError(f"{name} must be non-empty")


class MockBackend:
    """Pure function of (inputs, config.seed); identical across platforms.

    complete: "[" + role_prompt[:8] + "|" + 16 hex digits of
    FNV-1a-64(role_prompt + "\\n" + query + "\\n" + each input text + "\\n")
    + "]".

    embed: SplitMix64 seeded with FNV-1a-64(text) XOR config.seed, d draws
    of (next64 >> 11) * 2^-53 mapped onto [-1, 1], then L2-normalized.

    judge: parity of FNV-1a-64(query + "\\x1f" + role_prompt + "\\x1f" +
    message); even hash means +1.
    """

    def __init__(self, config: BackendConfig | None = None):
        self.config = config or BackendConfig(kind="mock")

    def complete(self, role_prompt: str, query: str, inputs: Sequence[Message]) -> str:
        _require_nonempty(role_prompt=role_prompt)
        payload = role_prompt + "\n" + query + "\n"
        payload += "".join(m.text + "\n" for m in inputs)
        return f"[{role_prompt[:8]}|{fnv1a64(payload):016x}]"

    def embed(self, text: str) -> EmbeddingVector:
        _require_nonempty(text=text)
        base = fnv1a64(text) ^ (self.config.seed & _MASK64)
        d = self.config.embed_dim
        for counter in range(16):
            state = (base + counter) & _MASK64
            raw: list[float] = []
            for _ in range(d):
                state, out = _splitmix64(state)
                raw.append((out >> 11) * 2.0**-53 * 2.0 - 1.0)
            norm = math.sqrt(sum(v * v for v in raw))
            if norm > 0.0:
                return EmbeddingVector(tuple(v / norm for v in raw))
        raise ZeroVector(f"embedding collapsed for {text!r}")  # pragma: no cover

    def judge_usefulness(self, query: str, role_prompt: str, message: str) -> int:
        _require_nonempty(query=query, role_prompt=role_prompt, message=message)
        h = fnv1a64(query + "\x1f" + role_prompt + "\x1f" + message)
        return 1 if h % 2 == 0 else -1


# A transport takes (url, json_body, headers, timeout) and returns
# (status_code, parsed_body). Kept injectable so tests never open sockets.
Transport = Callable[[str, dict, dict, float], tuple[int, dict]]


def _requests_transport(url: str, body: dict, headers: dict, timeout: float) -> tuple[int, dict]:
    import requests

    resp = requests.post(url, json=body, headers=headers, timeout=timeout)
    try:
        parsed = resp.json()
    except ValueError:
        parsed = {}
    return resp.status_code, parsed


class HttpBackend:
    """OpenAI-compatible client with retry/backoff and bounded concurrency.

    The user turn for ``complete`` renders the task and the incoming
    messages with their source ids::

        Task:
        <query>

        Incoming messages:
        [from <source_id>]
        <text>

    (or "(none)" when the agent has no inputs). Bearer token is read from
    the MASSCOPE_API_KEY environment variable at call time.
    """

    BACKOFF_BASE = 0.25
    BACKOFF_FACTOR = 2.0
    BACKOFF_JITTER = 0.10

    def __init__(
        self,
        config: BackendConfig,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if config.kind != "http":
            raise ValueError("HttpBackend requires kind='http'")
        self.config = config
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._gate = threading.Semaphore(config.max_inflight)
        self._jitter_rng = random.Random(config.seed)

    # -- plumbing ----------------------------------------------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, path: str, body: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                delay = self.BACKOFF_BASE * self.BACKOFF_FACTOR ** (attempt - 1)
                jitter = 1.0 + self.BACKOFF_JITTER * (2.0 * self._jitter_rng.random() - 1.0)
                self._sleep(delay * jitter)
            try:
                with self._gate:
                    status, parsed = self._transport(url, body, self._headers(), self.config.timeout)
            except Exception as exc:  # network-level failure
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if 200 <= status < 300:
                return parsed
            last_error = f"HTTP {status}"
            if 400 <= status < 500 and status != 429:
                break  # client errors (except rate limits) will not heal
        raise BackendUnavailable(f"POST {path} failed: {last_error}")

    def _chat(self, model: str, system: str, user: str) -> str:
        body = {
            "model": model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        parsed = self._post("/v1/chat/completions", body)
        try:
            content = parsed["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            content = None
        if not content:
            raise EmptyResponse("chat endpoint returned no content")
        return content

    # -- protocol ----------------------------------------------------------

    def complete(self, role_prompt: str, query: str, inputs: Sequence[Message]) -> str:
        _require_nonempty(role_prompt=role_prompt)
        if inputs:
            rendered = "\n".join(f"[from {m.source_id}]\n{m.text}" for m in inputs)
        else:
            rendered = "(none)"
        user = f"Task:\n{query}\n\nIncoming messages:\n{rendered}"
        return self._chat(self.config.chat_model, role_prompt, user)

    def embed(self, text: str) -> EmbeddingVector:
        _require_nonempty(text=text)
        body = {"model": self.config.embed_model, "input": [text]}
        parsed = self._post("/v1/embeddings", body)
        try:
            raw = parsed["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError):
            raise EmptyResponse("embeddings endpoint returned no vector")
        norm = math.sqrt(sum(float(v) ** 2 for v in raw))
        if norm == 0.0:
            raise ZeroVector("embeddings endpoint returned a zero vector")
        return EmbeddingVector(tuple(float(v) / norm for v in raw))

    def judge_usefulness(self, query: str, role_prompt: str, message: str) -> int:
        _require_nonempty(query=query, role_prompt=role_prompt, message=message)
        user = JUDGE_USER_TEMPLATE.format(
            query=query, role_prompt=role_prompt, message=message
        )
        for attempt in range(2):
            reply = self._chat(self.config.judge_model, JUDGE_SYSTEM_PROMPT, user)
            verdict = parse_judge_reply(reply)
            if verdict is not None:
                return verdict
            log.warning("judge reply unparseable (attempt %d): %r", attempt + 1, reply[:80])
        raise JudgeParseFailure(f"judge never produced a verdict token: {reply[:120]!r}")


def parse_judge_reply(reply: str) -> int | None:
    """Map a judge reply onto ±1, or None when no verdict token occurs.

    NOT_USEFUL is checked first since USEFUL is its substring.
    """
    if re.search(r"\bNOT_USEFUL\b", reply):
        return -1
    if re.search(r"\bUSEFUL\b", reply):
        return 1
    return None


@dataclass
class CachedBackend:
    """Content-addressed cache over embed/judge so concurrent metric passes
    stay order-independent; completions are never cached (each agent turn
    is distinct work).
    """

    inner: Backend
    _embeds: dict = field(default_factory=dict)
    _verdicts: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def complete(self, role_prompt: str, query: str, inputs: Sequence[Message]) -> str:
        return self.inner.complete(role_prompt, query, inputs)

    def embed(self, text: str) -> EmbeddingVector:
        with self._lock:
            hit = self._embeds.get(text)
        if hit is not None:
            return hit
        vec = self.inner.embed(text)
        with self._lock:
            self._embeds.setdefault(text, vec)
        return vec

    def judge_usefulness(self, query: str, role_prompt: str, message: str) -> int:
        key = (query, role_prompt, message)
        with self._lock:
            if key in self._verdicts:
                return self._verdicts[key]
        verdict = self.inner.judge_usefulness(query, role_prompt, message)
        with self._lock:
            self._verdicts.setdefault(key, verdict)
        return verdict


def make_backend(config: BackendConfig) -> Backend:
    if config.kind == "mock":
        return MockBackend(config)
    return HttpBackend(config)


__all__ = [
    "fnv1a64",
    "EmbeddingVector",
    "BackendConfig",
    "Backend",
    "MockBackend",
    "HttpBackend",
    "CachedBackend",
    "make_backend",
    "parse_judge_reply",
    "JUDGE_SYSTEM_PROMPT",
    "JUDGE_USER_TEMPLATE",
    "API_KEY_ENV",
]
