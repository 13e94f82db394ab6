"""LLM inference backends and prompt construction.

Three backend kinds share one ``generate`` surface:

* ``modelhub_http`` -- Ollama-style ``POST {base}/api/generate``
* ``openai_http``   -- ``POST {base}/v1/chat/completions`` (also used for
  Claude-style gateways via a configurable auth header)
* ``mock_replay``   -- JSONL fixture keyed by the prompt's SHA-256

All requests are non-streaming. Latency is wall-clock from request start to
the fully read response body, except for the mock backend which reports the
recorded latency so replayed runs are deterministic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import httpx

logger = logging.getLogger(__name__)

BACKEND_KINDS = ("modelhub_http", "openai_http", "mock_replay")
CHARS_PER_TOKEN = 4


class BackendError(RuntimeError):
    """Base class for inference failures."""


class BackendTimeout(BackendError):
    pass


class BackendHTTPError(BackendError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class FixtureMiss(BackendError):
    """The mock backend has no recording for this prompt."""


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    model: str = ""
    base_url: str | None = None
    fixture_path: str | None = None
    temperature: float = 0.0
    max_tokens: int | None = None
    timeout: float = 60.0
    retries: int = 2
    backoff: float = 1.0
    auth_header: str = "Authorization"
    name: str | None = None
    # mock only: sleep for the recorded latency so wall-clock probes see load
    simulate_delay: bool = True
    # "replay" makes non-LLM stages cost zero time and the LLM stage cost its
    # reported latency; default is replay for mock_replay, wall otherwise.
    clock: str | None = None

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}; expected one of {BACKEND_KINDS}")
        if not self.timeout > 0:
            raise ValueError("backend timeout must be > 0")
        if self.retries < 0:
            raise ValueError("backend retries must be >= 0")
        if self.kind == "mock_replay" and not self.fixture_path:
            raise ValueError("mock_replay backend requires fixture_path")
        if self.kind != "mock_replay" and not self.base_url:
            raise ValueError(f"{self.kind} backend requires base_url")
        if self.clock not in (None, "wall", "replay"):
            raise ValueError(f"invalid clock {self.clock!r}")

    @property
    def effective_clock(self) -> str:
        if self.clock:
            return self.clock
        return "replay" if self.kind == "mock_replay" else "wall"

    @property
    def api_key_env(self) -> str:
        label = re.sub(r"[^A-Za-z0-9]", "_", self.name or self.kind).upper()
        return f"CEBENCH_API_KEY_{label}"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BackendDescriptor":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown backend field(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class GenerationResult:
    text: str
    tokens_in: int
    tokens_out: int
    latency: float
    token_counts_exact: bool

    def __post_init__(self):
        if self.latency < 0 or self.tokens_in < 0 or self.tokens_out < 0:
            raise ValueError("latency and token counts must be non-negative")


def approx_token_count(text: str) -> int:
    """ceil(len / 4) over Unicode code points."""
    return math.ceil(len(text) / CHARS_PER_TOKEN)


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    """Cut ``text`` so that its approximate token count is at most ``max_tokens``."""
    return text[: max_tokens * CHARS_PER_TOKEN]


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Prompt builders
# ---------------------------------------------------------------------------

_PLACEHOLDER = re.compile(r"\{(query|context)\}")


def fill_template(template: str, query: str, context: str | None = None) -> str:
    """Literal single-pass substitution of ``{query}`` and ``{context}``.

    Single pass means text inserted for one placeholder is never rescanned,
    so a query containing ``{context}`` stays verbatim.
    """
    def sub(m: re.Match) -> str:
        if m.group(1) == "query":
            return query
        if context is None:
            raise ValueError("template has {context} but no context was supplied")
        return context

    return _PLACEHOLDER.sub(sub, template)


def build_rag_prompt(template: str, query: str, retrieved: Sequence[str]) -> str:
    """Fill ``{context}`` with the retrieved chunk texts joined by blank lines."""
    for ph in ("{query}", "{context}"):
        if ph not in template:
            raise ValueError(f"RAG template is missing placeholder {ph}")
    return fill_template(template, query, "\n\n".join(retrieved))


def build_fewshot_prompt(template: str, query: str, shots: Sequence[tuple[str, str]]) -> str:
    """Prefix ``Q: ...\\nA: ...`` example blocks to the rendered query.

    ``{context}``, if the template has one, is left empty.
    """
    if not shots:
        raise ValueError("few-shot prompting needs at least one shot")
    if "{query}" not in template:
        raise ValueError("template is missing placeholder {query}")
    blocks = "\n\n".join(f"Q: {q}\nA: {a}" for q, a in shots)
    return blocks + "\n\n" + fill_template(template, query, "")


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class Backend:
    descriptor: BackendDescriptor

    def generate(self, prompt: str) -> GenerationResult:
        raise NotImplementedError

    def close(self) -> None:
        pass


class _HTTPBackend(Backend):
    path = ""

    def __init__(self, descriptor: BackendDescriptor, transport: httpx.BaseTransport | None = None):
        self.descriptor = descriptor
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(descriptor.api_key_env)
        if key:
            if descriptor.auth_header.lower() == "authorization":
                headers["Authorization"] = f"Bearer {key}"
            else:
                headers[descriptor.auth_header] = key
        self._client = httpx.Client(
            base_url=descriptor.base_url.rstrip("/"),
            headers=headers,
            timeout=descriptor.timeout,
            transport=transport,
        )

    def payload(self, prompt: str) -> dict[str, Any]:
        raise NotImplementedError

    def parse(self, prompt: str, body: dict[str, Any], latency: float) -> GenerationResult:
        raise NotImplementedError

    def generate(self, prompt: str) -> GenerationResult:
        d = self.descriptor
        last: BackendError | None = None
        for attempt in range(d.retries + 1):
            if attempt:
                time.sleep(d.backoff)
            t0 = time.perf_counter()
            try:
                resp = self._client.post(self.path, json=self.payload(prompt))
                latency = time.perf_counter() - t0
            except httpx.TimeoutException as e:
                last = BackendTimeout(f"timed out after {d.timeout}s: {e}")
                continue
            except httpx.TransportError as e:
                last = BackendError(f"unreachable: {e}")
                continue
            if resp.status_code >= 500:
                last = BackendHTTPError(resp.status_code, resp.text)
                continue
            if resp.status_code >= 400:
                raise BackendHTTPError(resp.status_code, resp.text)
            try:
                body = resp.json()
            except ValueError as e:
                raise BackendError(f"response is not JSON: {e}") from e
            return self.parse(prompt, body, latency)
        assert last is not None
        raise last

    def close(self) -> None:
        self._client.close()


class ModelHubBackend(_HTTPBackend):
    path = "/api/generate"

    def payload(self, prompt):
        d = self.descriptor
        options: dict[str, Any] = {"temperature": d.temperature}
        if d.max_tokens is not None:
            options["num_predict"] = d.max_tokens
        return {"model": d.model, "prompt": prompt, "stream": False, "options": options}

    def parse(self, prompt, body, latency):
        if "response" not in body:
            raise BackendError("model hub response has no 'response' field")
        text = body["response"]
        n_in, n_out = body.get("prompt_eval_count"), body.get("eval_count")
        exact = isinstance(n_in, int) and isinstance(n_out, int)
        if not exact:
            n_in, n_out = approx_token_count(prompt), approx_token_count(text)
        return GenerationResult(text, n_in, n_out, latency, exact)


class OpenAIBackend(_HTTPBackend):
    path = "/v1/chat/completions"

    def payload(self, prompt):
        d = self.descriptor
        body: dict[str, Any] = {
            "model": d.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": d.temperature,
            "stream": False,
        }
        if d.max_tokens is not None:
            body["max_tokens"] = d.max_tokens
        return body

    def parse(self, prompt, body, latency):
        try:
            text = body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as e:
            raise BackendError(f"malformed chat completion: {e}") from e
        usage = body.get("usage") or {}
        n_in, n_out = usage.get("prompt_tokens"), usage.get("completion_tokens")
        exact = isinstance(n_in, int) and isinstance(n_out, int)
        if not exact:
            n_in, n_out = approx_token_count(prompt), approx_token_count(text)
        return GenerationResult(text, n_in, n_out, latency, exact)


@dataclass
class _Recording:
    response: str
    latency_ms: float
    tokens_in: int | None = None
    tokens_out: int | None = None


def load_mock_fixture(path: str | os.PathLike) -> dict[tuple[str | None, str], _Recording]:
    """Rows keyed by ``(model, prompt_sha256)``; ``model`` is optional and a
    row without it answers for every model."""
    table: dict[tuple[str | None, str], _Recording] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                table[(row.get("model"), row["prompt_sha256"])] = _Recording(
                    row["response"], float(row["latency_ms"]), row.get("tokens_in"), row.get("tokens_out")
                )
            except (ValueError, KeyError) as e:
                raise ValueError(f"{path}:{lineno}: bad fixture row: {e}") from e
    return table


def write_mock_fixture(path: str | os.PathLike, rows: Sequence[dict[str, Any]]) -> None:
    """Write fixture rows. Each row needs ``prompt`` (or ``prompt_sha256``),
    ``response`` and ``latency_ms``; token counts are optional."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            row = dict(row)
            if "prompt" in row:
                row["prompt_sha256"] = prompt_sha256(row.pop("prompt"))
            fh.write(json.dumps(row, sort_keys=True) + "\n")


class MockReplayBackend(Backend):
    """Replays recorded responses. ``calls`` counts generate() invocations."""

    def __init__(self, descriptor: BackendDescriptor):
        self.descriptor = descriptor
        self.table = load_mock_fixture(descriptor.fixture_path)
        self.calls = 0
        self._lock = threading.Lock()

    def generate(self, prompt: str) -> GenerationResult:
        with self._lock:
            self.calls += 1
        sha = prompt_sha256(prompt)
        rec = self.table.get((self.descriptor.model, sha)) or self.table.get((None, sha))
        if rec is None:
            raise FixtureMiss(f"unrecorded prompt (sha256 {prompt_sha256(prompt)[:12]}...)")
        latency = rec.latency_ms / 1000.0
        if self.descriptor.simulate_delay and latency > 0:
            time.sleep(latency)
        exact = rec.tokens_in is not None and rec.tokens_out is not None
        n_in = rec.tokens_in if rec.tokens_in is not None else approx_token_count(prompt)
        n_out = rec.tokens_out if rec.tokens_out is not None else approx_token_count(rec.response)
        return GenerationResult(rec.response, n_in, n_out, latency, exact)


def make_backend(descriptor: BackendDescriptor, transport: httpx.BaseTransport | None = None) -> Backend:
    if descriptor.kind == "mock_replay":
        return MockReplayBackend(descriptor)
    if descriptor.kind == "modelhub_http":
        return ModelHubBackend(descriptor, transport)
    return OpenAIBackend(descriptor, transport)


def generate(backend: BackendDescriptor | Backend, prompt: str) -> GenerationResult:
    """One-shot convenience wrapper; reuse a ``Backend`` for batches."""
    if isinstance(backend, Backend):
        return backend.generate(prompt)
    b = make_backend(backend)
    try:
        return b.generate(prompt)
    finally:
        b.close()
