"""Uniform chat-completion gateway over LLM providers.

Supports synchronous completions with retry, structured-output parsing, and
batch submission. Providers without a native batch API are emulated with a
bounded thread pool. A deterministic scripted mock provider backs every test
path; an OpenAI-compatible HTTP provider covers real deployments.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
import uuid
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

FINISH_COMPLETE = "complete"
FINISH_TRUNCATED = "truncated"
FINISH_REFUSED = "refused"

BATCH_QUEUED = "queued"
BATCH_RUNNING = "running"
BATCH_PARTIAL = "partial"
BATCH_DONE = "done"
BATCH_FAILED = "failed"


class ProviderError(Exception):
    """Base class for provider failures."""


class AuthError(ProviderError):
    pass


class RateLimitError(ProviderError):
    """Transient; the gateway retries these."""


class TransportError(ProviderError):
    """Transient; the gateway retries these."""


class RefusalError(ProviderError):
    """The model declined to answer (alignment safeguard)."""

    def __init__(self, message: str = "provider refused the request", raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class SchemaParseError(ProviderError):
    """Structured output did not match the requested schema; raw text kept for logging."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class UnknownHandleError(KeyError):
    pass


@dataclass(frozen=True, slots=True)
class TokenUsage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be >= 0")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.input_tokens + other.input_tokens,
            self.output_tokens + other.output_tokens,
        )


@dataclass(frozen=True, slots=True)
class ResponseSchema:
    """Structured-output shape descriptor.

    kind:
      string_array - JSON array of strings
      object_array - JSON array of objects
      score_map    - JSON object mapping id -> numeric score
    """

    kind: str
    fields: tuple[str, ...] = ()


@dataclass(frozen=True, slots=True)
class ChatRequest:
    model: str
    user_prompt: str
    system_prompt: str | None = None
    temperature: float = 0.8
    max_output_tokens: int | None = None
    response_schema: ResponseSchema | None = None

    def __post_init__(self) -> None:
        if not self.user_prompt:
            raise ValueError("user_prompt must be non-empty")
        if not (0.0 <= self.temperature <= 1.0):
            raise ValueError(f"temperature must lie in [0,1], got {self.temperature}")


@dataclass(frozen=True, slots=True)
class ChatResponse:
    text: str
    usage: TokenUsage
    model: str
    finish_reason: str = FINISH_COMPLETE
    usage_estimated: bool = False
    retries: int = 0


@dataclass(frozen=True, slots=True)
class CostLedger:
    """Accumulated token usage per model; immutable, add() returns a new ledger."""

    per_model: Mapping[str, TokenUsage] = field(default_factory=dict)
    estimated_models: frozenset[str] = frozenset()

    def add(self, resp: ChatResponse) -> "CostLedger":
        per_model = dict(self.per_model)
        per_model[resp.model] = per_model.get(resp.model, TokenUsage()) + resp.usage
        estimated = self.estimated_models | ({resp.model} if resp.usage_estimated else frozenset())
        return CostLedger(per_model=per_model, estimated_models=estimated)

    def totals(self) -> TokenUsage:
        total = TokenUsage()
        for usage in self.per_model.values():
            total = total + usage
        return total

    def to_dict(self) -> dict:
        return {
            "per_model": {
                m: {"input_tokens": u.input_tokens, "output_tokens": u.output_tokens}
                for m, u in sorted(self.per_model.items())
            },
            "estimated_models": sorted(self.estimated_models),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostLedger":
        return cls(
            per_model={
                m: TokenUsage(u["input_tokens"], u["output_tokens"])
                for m, u in d.get("per_model", {}).items()
            },
            estimated_models=frozenset(d.get("estimated_models", [])),
        )


def record_usage(resp: ChatResponse, ledger: CostLedger) -> CostLedger:
    return ledger.add(resp)


def estimate_usage(prompt: str, output: str) -> TokenUsage:
    # chars/4 approximation, used only when the provider omits usage
    return TokenUsage(max(len(prompt) // 4, 1), max(len(output) // 4, 1))


def parse_structured(text: str, schema: ResponseSchema) -> Any:
    """Parse provider output against a schema descriptor.

    Tolerates markdown code fences around the JSON body. Raises
    SchemaParseError carrying the raw text on any mismatch.
    """
    body = text.strip()
    if body.startswith("```"):
        lines = body.splitlines()
        lines = lines[1:]
        if lines and lines[-1].strip().startswith("```"):
            lines = lines[:-1]
        body = "\n".join(lines).strip()
    try:
        value = json.loads(body)
    except json.JSONDecodeError as exc:
        raise SchemaParseError(f"invalid JSON: {exc}", raw_text=text) from exc

    if schema.kind == "string_array":
        if not isinstance(value, list):
            raise SchemaParseError("expected a JSON array", raw_text=text)
        out: list[str] = []
        for item in value:
            if isinstance(item, str):
                out.append(item)
            elif isinstance(item, dict):
                for key in ("message", "content", "text"):
                    if key in item and isinstance(item[key], str):
                        out.append(item[key])
                        break
                else:
                    raise SchemaParseError(f"array item without text field: {item!r}", raw_text=text)
            else:
                raise SchemaParseError(f"array item is not a string: {item!r}", raw_text=text)
        return out
    if schema.kind == "object_array":
        if not isinstance(value, list) or not all(isinstance(i, dict) for i in value):
            raise SchemaParseError("expected a JSON array of objects", raw_text=text)
        return value
    if schema.kind == "score_map":
        if not isinstance(value, dict):
            raise SchemaParseError("expected a JSON object of id->score", raw_text=text)
        out_map: dict[str, float] = {}
        for key, raw in value.items():
            try:
                out_map[str(key)] = float(raw)
            except (TypeError, ValueError) as exc:
                raise SchemaParseError(f"non-numeric score for {key!r}: {raw!r}", raw_text=text) from exc
        return out_map
    raise SchemaParseError(f"unknown schema kind {schema.kind!r}", raw_text=text)


class Provider(Protocol):
    def chat(self, req: ChatRequest) -> ChatResponse: ...


# --- Mock provider -----------------------------------------------------------


@dataclass
class ScriptEntry:
    """One scripted behavior of the mock provider.

    match: substring of the user prompt, an integer call index, or None for
    match-all. Entries are consulted in order; `times` limits how many calls
    an entry serves (None = unlimited).
    """

    match: str | int | None = None
    response: str = ""
    usage: TokenUsage = field(default_factory=lambda: TokenUsage(10, 20))
    error: str | None = None  # "rate_limit" | "transport" | "auth"
    refusal: bool = False
    times: int | None = None
    delay_s: float = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptEntry":
        usage = d.get("usage") or {}
        return cls(
            match=d.get("match"),
            response=d.get("response", ""),
            usage=TokenUsage(usage.get("input", 10), usage.get("output", 20)),
            error=d.get("error"),
            refusal=bool(d.get("refusal", False)),
            times=d.get("times"),
            delay_s=float(d.get("delay_s", 0.0)),
        )


def load_script(path: str | Path) -> list[ScriptEntry]:
    """Mock script file: JSONL of {match, response, usage: {input, output}, ...}."""
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            entries.append(ScriptEntry.from_dict(json.loads(line)))
    return entries


class MockProvider:
    """Deterministic scripted provider.

    Wholly determined by its script: each call scans entries top-down and the
    first matching entry with remaining uses serves the call. Integer matches
    compare against a per-provider call counter, so index-matched scripts are
    only deterministic under parallelism 1.
    """

    def __init__(self, entries: Sequence[ScriptEntry], sleeper: Callable[[float], None] = time.sleep):
        self._entries = [
            _MockSlot(entry=e, remaining=e.times) for e in entries
        ]
        self._sleeper = sleeper
        self._lock = threading.Lock()
        self._calls = 0

    def chat(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            index = self._calls
            self._calls += 1
            slot = self._find(req.user_prompt, index)
            if slot is None:
                raise ProviderError(f"mock script has no entry matching call {index}")
            if slot.remaining is not None:
                slot.remaining -= 1
            entry = slot.entry
        if entry.delay_s > 0:
            self._sleeper(entry.delay_s)
        if entry.error == "rate_limit":
            raise RateLimitError("scripted 429")
        if entry.error == "transport":
            raise TransportError("scripted transport failure")
        if entry.error == "auth":
            raise AuthError("scripted auth failure")
        finish = FINISH_REFUSED if entry.refusal else FINISH_COMPLETE
        return ChatResponse(text=entry.response, usage=entry.usage, model=req.model, finish_reason=finish)

    def _find(self, prompt: str, index: int) -> "_MockSlot | None":
        for slot in self._entries:
            if slot.remaining is not None and slot.remaining <= 0:
                continue
            m = slot.entry.match
            if m is None or (isinstance(m, int) and m == index) or (isinstance(m, str) and m in prompt):
                return slot
        return None


@dataclass
class _MockSlot:
    entry: ScriptEntry
    remaining: int | None


class DedupingSummarizerProvider:
    """Mock summarizer that merges exact-duplicate list items.

    Stands in for the LLM summarization step in tests and offline demos: it
    extracts the item list from the tail of the prompt, drops verbatim
    repeats while preserving first-seen order, and joins the survivors into
    one paragraph.
    """

    marker = "Indicators to summarize:"

    def chat(self, req: ChatRequest) -> ChatResponse:
        prompt = req.user_prompt
        tail = prompt.split(self.marker, 1)[1] if self.marker in prompt else prompt
        seen: set[str] = set()
        items: list[str] = []
        for line in tail.splitlines():
            line = line.strip().lstrip("-*").strip()
            if line and line not in seen:
                seen.add(line)
                items.append(line)
        text = "; ".join(items) + "."
        usage = estimate_usage(prompt, text)
        return ChatResponse(text=text, usage=usage, model=req.model, usage_estimated=True)


# --- OpenAI-compatible HTTP provider -----------------------------------------


class OpenAICompatProvider:
    """Chat-completions provider speaking the common OpenAI dialect.

    Works against any endpoint exposing POST {base_url}/chat/completions with
    bearer-token auth, which covers most hosted and self-hosted gateways.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        client: httpx.Client | None = None,
    ):
        self._base_url = base_url.rstrip("/")
        self._api_key = api_key
        self._client = client or httpx.Client(timeout=timeout)

    def chat(self, req: ChatRequest) -> ChatResponse:
        messages = []
        if req.system_prompt:
            messages.append({"role": "system", "content": req.system_prompt})
        messages.append({"role": "user", "content": req.user_prompt})
        # "provider:model" references keep only the model id on the wire
        model_id = req.model.split(":", 1)[1] if ":" in req.model else req.model
        payload: dict[str, Any] = {
            "model": model_id,
            "messages": messages,
            "temperature": req.temperature,
        }
        if req.max_output_tokens is not None:
            payload["max_tokens"] = req.max_output_tokens
        if req.response_schema is not None:
            payload["response_format"] = {"type": "json_object"}
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        try:
            resp = self._client.post(f"{self._base_url}/chat/completions", json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 401:
            raise AuthError("authentication failed")
        if resp.status_code == 429:
            raise RateLimitError("rate limited")
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"request rejected ({resp.status_code}): {resp.text[:500]}")
        body = resp.json()
        choice = body["choices"][0]
        text = choice.get("message", {}).get("content") or ""
        finish = choice.get("finish_reason", "stop")
        finish_reason = {
            "stop": FINISH_COMPLETE,
            "length": FINISH_TRUNCATED,
            "content_filter": FINISH_REFUSED,
        }.get(finish, FINISH_COMPLETE)
        usage_raw = body.get("usage")
        if usage_raw:
            usage = TokenUsage(usage_raw.get("prompt_tokens", 0), usage_raw.get("completion_tokens", 0))
            estimated = False
        else:
            usage = estimate_usage(req.user_prompt, text)
            estimated = True
        return ChatResponse(
            text=text,
            usage=usage,
            model=req.model,
            finish_reason=finish_reason,
            usage_estimated=estimated,
        )


# --- Batch state --------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class BatchResult:
    index: int
    response: ChatResponse | None = None
    error: str | None = None
    error_kind: str | None = None


@dataclass(frozen=True, slots=True)
class BatchStatus:
    handle: str
    status: str
    completed: int
    total: int
    results: tuple[BatchResult, ...]


@dataclass(frozen=True, slots=True)
class BatchHandle:
    handle: str
    total: int


class _BatchState:
    def __init__(self, handle: str, total: int):
        self.handle = handle
        self.total = total
        self.lock = threading.Lock()
        self.results: dict[int, BatchResult] = {}
        self.started = 0

    def snapshot(self) -> BatchStatus:
        with self.lock:
            completed = len(self.results)
            if completed >= self.total:
                status = BATCH_DONE
            elif completed > 0:
                status = BATCH_PARTIAL
            elif self.started > 0:
                status = BATCH_RUNNING
            else:
                status = BATCH_QUEUED
            results = tuple(self.results[i] for i in sorted(self.results))
            return BatchStatus(
                handle=self.handle,
                status=status,
                completed=completed,
                total=self.total,
                results=results,
            )


class Gateway:
    """Routes requests to named providers with retry and batch emulation.

    Shareable across threads; each in-flight request is independent and batch
    state is mutated under its own lock. Refusals surface as
    finish_reason="refused" on the response, never as transport errors.
    """

    def __init__(
        self,
        providers: Mapping[str, Provider],
        retry_limit: int = 3,
        backoff_base: float = 0.5,
        parallelism: int = 4,
        sleeper: Callable[[float], None] = time.sleep,
        rng_seed: int | None = None,
    ):
        self._providers = dict(providers)
        self._retry_limit = retry_limit
        self._backoff_base = backoff_base
        self._parallelism = max(1, parallelism)
        self._sleeper = sleeper
        self._rng = random.Random(rng_seed)
        self._batches: dict[str, _BatchState] = {}
        self._executors: dict[str, ThreadPoolExecutor] = {}
        self._lock = threading.Lock()

    def _provider_for(self, model: str) -> Provider:
        if model in self._providers:
            return self._providers[model]
        # allow "provider:model" references
        if ":" in model:
            name = model.split(":", 1)[0]
            if name in self._providers:
                return self._providers[name]
        raise ProviderError(f"no provider configured for model {model!r}")

    def complete_chat(self, req: ChatRequest) -> ChatResponse:
        provider = self._provider_for(req.model)
        attempts = 0
        while True:
            try:
                resp = provider.chat(req)
                if attempts:
                    resp = ChatResponse(
                        text=resp.text,
                        usage=resp.usage,
                        model=resp.model,
                        finish_reason=resp.finish_reason,
                        usage_estimated=resp.usage_estimated,
                        retries=attempts,
                    )
                return resp
            except (RateLimitError, TransportError) as exc:
                attempts += 1
                if attempts > self._retry_limit:
                    raise
                delay = self._backoff_base * (2 ** (attempts - 1)) * (1 + self._rng.random() * 0.1)
                logger.debug("retry %d for %s after %s: %s", attempts, req.model, type(exc).__name__, exc)
                self._sleeper(delay)

    def complete_structured(self, req: ChatRequest) -> Any:
        if req.response_schema is None:
            raise ValueError("complete_structured requires a response_schema")
        resp = self.complete_chat(req)
        if resp.finish_reason == FINISH_REFUSED:
            raise RefusalError(raw_text=resp.text)
        return parse_structured(resp.text, req.response_schema)

    def submit_batch(self, reqs: Sequence[ChatRequest]) -> BatchHandle:
        if not reqs:
            raise ValueError("submit_batch requires a non-empty request list")
        handle = uuid.uuid4().hex
        state = _BatchState(handle, len(reqs))
        executor = ThreadPoolExecutor(max_workers=self._parallelism)
        with self._lock:
            self._batches[handle] = state
            self._executors[handle] = executor

        def run(i: int, req: ChatRequest) -> None:
            with state.lock:
                state.started += 1
            try:
                resp = self.complete_chat(req)
                result = BatchResult(index=i, response=resp)
            except Exception as exc:
                result = BatchResult(index=i, error=str(exc), error_kind=type(exc).__name__)
            with state.lock:
                state.results[i] = result

        futures: list[Future] = [executor.submit(run, i, r) for i, r in enumerate(reqs)]
        state.futures = futures  # type: ignore[attr-defined]
        executor.shutdown(wait=False)
        return BatchHandle(handle=handle, total=len(reqs))

    def poll_batch(self, handle: BatchHandle | str) -> BatchStatus:
        key = handle.handle if isinstance(handle, BatchHandle) else handle
        with self._lock:
            state = self._batches.get(key)
        if state is None:
            raise UnknownHandleError(key)
        return state.snapshot()

    def wait_batch(
        self,
        handle: BatchHandle | str,
        poll_interval: float = 0.01,
        timeout: float | None = None,
        on_progress: Callable[[BatchStatus], None] | None = None,
    ) -> BatchStatus:
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            status = self.poll_batch(handle)
            if on_progress is not None:
                on_progress(status)
            if status.status == BATCH_DONE:
                return status
            if deadline is not None and time.monotonic() > deadline:
                raise TimeoutError(f"batch {status.handle} incomplete after timeout")
            time.sleep(poll_interval)
