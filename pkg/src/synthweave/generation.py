"""Generation job planning and execution.

A job is planned as a list of fully rendered per-request prompts, then run
through the gateway's batch interface. Every settled request is persisted
atomically under the job directory (raw/req_<i>.json as the idempotency
marker), so a crash loses at most in-flight requests and re-running the same
job never repeats completed ones. produced.jsonl is rebuilt from the markers,
which keeps it duplicate-free across resumes.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .indicators import IndicatorSet
from .models import (
    SOURCE_SYNTHETIC,
    Dataset,
    GenerationParams,
    Message,
    ValidationError,
    message_to_json_line,
)
from .prompts import PromptTemplate, SeedBatch, build_generation_prompt, shuffle_and_batch
from .providers import (
    BATCH_DONE,
    FINISH_REFUSED,
    ChatRequest,
    ChatResponse,
    CostLedger,
    Gateway,
    ResponseSchema,
    SchemaParseError,
    parse_structured,
)

logger = logging.getLogger(__name__)

STATE_PENDING = "pending"
STATE_RUNNING = "running"
STATE_DONE = "done"
STATE_FAILED = "failed"

_STRING_ARRAY = ResponseSchema(kind="string_array")


class JobError(RuntimeError):
    pass


class UnknownJobError(KeyError):
    pass


@dataclass(frozen=True, slots=True)
class PlannedRequest:
    index: int
    prompt: str
    count: int
    temperature: float
    model: str

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "prompt": self.prompt,
            "count": self.count,
            "temperature": self.temperature,
            "model": self.model,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlannedRequest":
        return cls(**d)


@dataclass(frozen=True, slots=True)
class GenerationPlan:
    job_id: str
    category: str
    target_total: int
    per_request_count: int
    requests: tuple[PlannedRequest, ...]
    alignment_clause: str | None = None
    session_id: str | None = None
    rng_seed: int | None = None

    def __post_init__(self) -> None:
        if not self.requests:
            raise ValidationError("a plan needs at least one request")
        if self.per_request_count < 1:
            raise ValidationError("per_request_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "category": self.category,
            "target_total": self.target_total,
            "per_request_count": self.per_request_count,
            "alignment_clause": self.alignment_clause,
            "session_id": self.session_id,
            "rng_seed": self.rng_seed,
            "requests": [r.to_dict() for r in self.requests],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationPlan":
        return cls(
            job_id=d["job_id"],
            category=d["category"],
            target_total=d["target_total"],
            per_request_count=d["per_request_count"],
            alignment_clause=d.get("alignment_clause"),
            session_id=d.get("session_id"),
            rng_seed=d.get("rng_seed"),
            requests=tuple(PlannedRequest.from_dict(r) for r in d["requests"]),
        )


@dataclass(frozen=True, slots=True)
class JobResult:
    job_id: str
    produced: Dataset
    per_request_counts: tuple[int, ...]
    failures: tuple[tuple[int, str], ...]
    ledger: CostLedger = field(default_factory=CostLedger)


def plan_job(
    params: GenerationParams,
    seeds: Dataset | Sequence[Message] | None,
    tmpl: PromptTemplate,
    indicators: IndicatorSet,
    model: str,
    per_request_count: int = 100,
    seed_batch_size: int = 10,
    job_id: str | None = None,
    session_id: str | None = None,
    alignment_clause: str | None = None,
) -> GenerationPlan:
    """Lay out ceil(target/per_request) requests; seed batches are assigned
    round-robin, cycling when the job needs more requests than batches. With
    no seeds at all, prompts carry only the task text and indicators."""
    if params.target_size < 1:
        raise ValidationError("target_size must be >= 1")
    if indicators is None or not indicators.summary:
        raise ValidationError("an indicator summary is required to plan a job")

    seed_list = list(seeds) if seeds is not None else []
    batches: list[SeedBatch | None]
    if seed_list:
        batches = list(shuffle_and_batch(seed_list, seed_batch_size, params.rng_seed))
    else:
        batches = [None]

    n_requests = math.ceil(params.target_size / per_request_count)
    counts = [per_request_count] * n_requests
    counts[-1] = params.target_size - per_request_count * (n_requests - 1)

    requests = []
    for i in range(n_requests):
        batch = batches[i % len(batches)]
        prompt = build_generation_prompt(tmpl, indicators.summary, batch, count=counts[i])
        requests.append(
            PlannedRequest(
                index=i,
                prompt=prompt,
                count=counts[i],
                temperature=params.temperature,
                model=model,
            )
        )
    return GenerationPlan(
        job_id=job_id or uuid.uuid4().hex[:12],
        category=params.category,
        target_total=params.target_size,
        per_request_count=per_request_count,
        requests=tuple(requests),
        alignment_clause=alignment_clause or tmpl.alignment_clause,
        session_id=session_id,
        rng_seed=params.rng_seed,
    )


def parse_generation_output(
    raw: object,
    category: str,
    session_id: str | None = None,
) -> tuple[list[Message], int]:
    """Turn a structured response (JSON array) into synthetic messages.

    Array items may be plain strings or objects carrying a text field and an
    optional score. Empty strings are dropped and counted, not fatal."""
    if not isinstance(raw, list):
        raise ValidationError(f"generation output is not an array: {type(raw).__name__}")
    messages: list[Message] = []
    dropped = 0
    for item in raw:
        content: str | None = None
        score: float | None = None
        if isinstance(item, str):
            content = item
        elif isinstance(item, dict):
            for key in ("message", "content", "text"):
                if isinstance(item.get(key), str):
                    content = item[key]
                    break
            raw_score = item.get("score", item.get("cyberattack_score"))
            if raw_score is not None:
                try:
                    score = min(1.0, max(0.0, float(raw_score)))
                except (TypeError, ValueError):
                    score = None
        if not content:
            dropped += 1
            continue
        messages.append(
            Message.create(
                content=content,
                source=SOURCE_SYNTHETIC,
                category=category,
                score=score,
                session_id=session_id,
            )
        )
    if dropped:
        logger.warning("dropped %d empty generation outputs", dropped)
    return messages, dropped


# --- Job persistence ---------------------------------------------------------


def _atomic_write(path: Path, payload: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(payload, encoding="utf-8")
    os.replace(tmp, path)


def _marker_path(job_dir: Path, index: int, failed: bool = False) -> Path:
    name = f"req_{index:05d}.failed.json" if failed else f"req_{index:05d}.json"
    return job_dir / "raw" / name


def save_plan(plan: GenerationPlan, job_dir: str | Path) -> None:
    job_dir = Path(job_dir)
    job_dir.mkdir(parents=True, exist_ok=True)
    (job_dir / "raw").mkdir(exist_ok=True)
    path = job_dir / "plan.json"
    if not path.exists():
        _atomic_write(path, json.dumps(plan.to_dict(), ensure_ascii=False, indent=2))


def load_plan(job_dir: str | Path) -> GenerationPlan:
    path = Path(job_dir) / "plan.json"
    if not path.exists():
        raise UnknownJobError(str(job_dir))
    return GenerationPlan.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _settled_indices(job_dir: Path) -> tuple[set[int], set[int]]:
    """(successful, failed) request indices recovered from marker files."""
    raw_dir = job_dir / "raw"
    ok: set[int] = set()
    failed: set[int] = set()
    if raw_dir.exists():
        for p in raw_dir.iterdir():
            if p.name.endswith(".failed.json"):
                failed.add(int(p.name[len("req_") : len("req_") + 5]))
            elif p.name.endswith(".json") and not p.name.endswith(".tmp"):
                ok.add(int(p.name[len("req_") : len("req_") + 5]))
    return ok, failed


class _JobRun:
    """Mutable run state shared between the poll loop and status writers."""

    def __init__(self, plan: GenerationPlan, job_dir: Path | None):
        self.plan = plan
        self.job_dir = job_dir
        self.lock = threading.Lock()
        self.results: dict[int, list[Message]] = {}
        self.counts: dict[int, int] = {}
        self.dropped: dict[int, int] = {}
        self.failures: dict[int, str] = {}
        self.ledger = CostLedger()
        if job_dir is not None:
            ok, failed = _settled_indices(job_dir)
            for i in ok:
                payload = json.loads(_marker_path(job_dir, i).read_text(encoding="utf-8"))
                self.results[i] = [Message.from_dict(m) for m in payload["messages"]]
                self.counts[i] = len(self.results[i])
                self.dropped[i] = payload.get("dropped", 0)
            for i in failed:
                payload = json.loads(_marker_path(job_dir, i, failed=True).read_text(encoding="utf-8"))
                self.failures[i] = payload.get("error", "unknown failure")

    @property
    def settled(self) -> set[int]:
        return set(self.results) | set(self.failures)

    def record_success(self, index: int, resp: ChatResponse, messages: list[Message], dropped: int) -> None:
        with self.lock:
            self.results[index] = messages
            self.counts[index] = len(messages)
            self.dropped[index] = dropped
            self.ledger = self.ledger.add(resp)
            if self.job_dir is not None:
                payload = {
                    "index": index,
                    "model": resp.model,
                    "text": resp.text,
                    "usage": {
                        "input_tokens": resp.usage.input_tokens,
                        "output_tokens": resp.usage.output_tokens,
                    },
                    "dropped": dropped,
                    "messages": [m.to_dict() for m in messages],
                }
                _atomic_write(
                    _marker_path(self.job_dir, index),
                    json.dumps(payload, ensure_ascii=False),
                )
                self._write_status(STATE_RUNNING)

    def record_failure(self, index: int, error: str, raw_text: str | None = None) -> None:
        with self.lock:
            self.failures[index] = error
            if raw_text:
                logger.warning("request %d unparseable output: %s", index, raw_text[:200])
            if self.job_dir is not None:
                payload = {"index": index, "error": error, "raw_text": raw_text}
                _atomic_write(
                    _marker_path(self.job_dir, index, failed=True),
                    json.dumps(payload, ensure_ascii=False),
                )
                self._write_status(STATE_RUNNING)

    def status_dict(self, state: str) -> dict:
        return {
            "job_id": self.plan.job_id,
            "state": state,
            "requests_total": len(self.plan.requests),
            "requests_done": len(self.settled),
            "messages_so_far": sum(self.counts.values()),
            "per_request_counts": {str(i): self.counts[i] for i in sorted(self.counts)},
            "failures": [[i, self.failures[i]] for i in sorted(self.failures)],
            "dropped_empty": sum(self.dropped.values()),
            "ledger": self.ledger.to_dict(),
        }

    def _write_status(self, state: str) -> None:
        if self.job_dir is not None:
            _atomic_write(self.job_dir / "status.json", json.dumps(self.status_dict(state), indent=2))

    def write_status(self, state: str) -> None:
        with self.lock:
            self._write_status(state)

    def rebuild_produced(self) -> list[Message]:
        ordered: list[Message] = []
        for i in sorted(self.results):
            ordered.extend(self.results[i])
        if self.job_dir is not None:
            lines = "".join(message_to_json_line(m) + "\n" for m in ordered)
            _atomic_write(self.job_dir / "produced.jsonl", lines)
        return ordered


def run_job(
    plan: GenerationPlan,
    gateway: Gateway,
    job_dir: str | Path | None = None,
    poll_interval: float = 0.01,
) -> JobResult:
    """Execute (or resume) a plan. Already-settled request indices are never
    re-submitted; a refused request is retried once with the alignment clause
    appended before being recorded as a failure."""
    job_path = Path(job_dir) if job_dir is not None else None
    if job_path is not None:
        save_plan(plan, job_path)
    run = _JobRun(plan, job_path)
    pending = [r for r in plan.requests if r.index not in run.settled]
    run.write_status(STATE_RUNNING)

    if pending:
        reqs = [
            ChatRequest(
                model=r.model,
                user_prompt=r.prompt,
                temperature=r.temperature,
                response_schema=_STRING_ARRAY,
            )
            for r in pending
        ]
        handle = gateway.submit_batch(reqs)
        seen: set[int] = set()

        def absorb(status) -> None:
            for item in status.results:
                if item.index in seen:
                    continue
                seen.add(item.index)
                planned = pending[item.index]
                _settle_request(run, planned, item.response, item.error, item.error_kind, gateway)

        final = gateway.wait_batch(handle, poll_interval=poll_interval, on_progress=absorb)
        assert final.status == BATCH_DONE
        absorb(final)

    produced_messages = run.rebuild_produced()
    if not run.results and run.failures:
        run.write_status(STATE_FAILED)
        raise JobError(
            f"all {len(plan.requests)} generation requests failed: "
            + "; ".join(f"{i}: {e}" for i, e in sorted(run.failures.items()))
        )
    run.write_status(STATE_DONE)

    produced = Dataset.from_messages(
        produced_messages,
        name=f"job-{plan.job_id}",
        provenance="initial",
        strict=False,
    )
    return JobResult(
        job_id=plan.job_id,
        produced=produced,
        per_request_counts=tuple(run.counts[i] for i in sorted(run.counts)),
        failures=tuple((i, run.failures[i]) for i in sorted(run.failures)),
        ledger=run.ledger,
    )


def _settle_request(
    run: _JobRun,
    planned: PlannedRequest,
    resp: ChatResponse | None,
    error: str | None,
    error_kind: str | None,
    gateway: Gateway,
) -> None:
    if resp is None:
        run.record_failure(planned.index, f"{error_kind}: {error}")
        return
    if resp.finish_reason == FINISH_REFUSED and run.plan.alignment_clause:
        logger.info("request %d refused; retrying once with alignment clause", planned.index)
        try:
            resp = gateway.complete_chat(
                ChatRequest(
                    model=planned.model,
                    user_prompt=planned.prompt + "\n\n" + run.plan.alignment_clause,
                    temperature=planned.temperature,
                    response_schema=_STRING_ARRAY,
                )
            )
        except Exception as exc:
            run.record_failure(planned.index, f"{type(exc).__name__}: {exc}")
            return
    if resp.finish_reason == FINISH_REFUSED:
        run.record_failure(planned.index, "RefusalError: provider refused", raw_text=resp.text)
        return
    try:
        raw_value = parse_structured(resp.text, _STRING_ARRAY)
    except SchemaParseError as exc:
        run.record_failure(planned.index, f"SchemaParseError: {exc}", raw_text=exc.raw_text)
        return
    messages, dropped = parse_generation_output(
        raw_value, category=run.plan.category, session_id=run.plan.session_id
    )
    run.record_success(planned.index, resp, messages, dropped)


def job_status(job_dir: str | Path) -> dict:
    """Progress snapshot from the persisted status file; counters are
    monotone because markers are never deleted."""
    path = Path(job_dir) / "status.json"
    if not path.exists():
        raise UnknownJobError(str(job_dir))
    return json.loads(path.read_text(encoding="utf-8"))


def load_produced(job_dir: str | Path) -> list[Message]:
    path = Path(job_dir) / "produced.jsonl"
    if not path.exists():
        return []
    from .models import read_jsonl

    return read_jsonl(path)


class JobStore:
    """Directory-per-job registry used by the CLI and the service."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def job_dir(self, job_id: str, create: bool = False) -> Path:
        path = self.root / job_id
        if create:
            path.mkdir(parents=True, exist_ok=True)
        elif not path.exists():
            raise UnknownJobError(job_id)
        return path

    def list_jobs(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())

    def status(self, job_id: str) -> dict:
        return job_status(self.job_dir(job_id))

    def unfinished_jobs(self) -> list[str]:
        out = []
        for job_id in self.list_jobs():
            try:
                if self.status(job_id).get("state") not in (STATE_DONE, STATE_FAILED):
                    out.append(job_id)
            except UnknownJobError:
                continue
        return out
