"""Domain-indicator extraction: query several LLMs for candidate indicators,
then fuse them into one dense summary paragraph via a low-temperature
summarization call.

Every raw candidate set is kept (and persisted) so a subject-matter expert
can review what each model contributed before trusting the fused summary.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from .models import GenerationParams, ValidationError, format_timestamp, parse_timestamp
from .prompts import SUMMARIZE_MARKER, load_template_text, render
from .providers import ChatRequest, Gateway

logger = logging.getLogger(__name__)

_LIST_MARKER = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")

DEFAULT_SUMMARY_TEMPERATURE = 0.2


@dataclass(frozen=True, slots=True)
class BackgroundContext:
    """Optional grounding for indicator generation: reference articles and
    dated events the models are likely to know."""

    general_knowledge: tuple[str, ...] = ()
    historical_events: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if any(not a for a in self.general_knowledge):
            raise ValidationError("knowledge articles must be non-empty")
        if any(not d or not e for d, e in self.historical_events):
            raise ValidationError("historical events need both date and entity")

    @property
    def empty(self) -> bool:
        return not self.general_knowledge and not self.historical_events


@dataclass(frozen=True, slots=True)
class IndicatorCandidateSet:
    provider: str
    raw_text: str
    items: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class IndicatorSet:
    """The fused indicator summary that conditions generation and annotation."""

    summary: str
    sources: tuple[str, ...]
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def __post_init__(self) -> None:
        if not self.summary:
            raise ValidationError("indicator summary must be non-empty")
        if not self.sources:
            raise ValidationError("indicator set needs at least one source")

    def to_dict(self) -> dict:
        return {
            "summary": self.summary,
            "sources": list(self.sources),
            "created_at": format_timestamp(self.created_at),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IndicatorSet":
        return cls(
            summary=d["summary"],
            sources=tuple(d["sources"]),
            created_at=parse_timestamp(d.get("created_at")) or datetime.now(timezone.utc),
        )


@dataclass(frozen=True, slots=True)
class CandidateGenerationResult:
    candidates: tuple[IndicatorCandidateSet, ...]
    failures: tuple[tuple[str, str], ...] = ()  # (provider, error)


def build_indicator_prompt(
    params: GenerationParams,
    ctx: BackgroundContext | None = None,
    template_dir: str | Path | None = None,
) -> str:
    """Render the indicator-generation prompt; knowledge/events sections are
    omitted entirely when the context is empty."""
    if not params.topic or not params.industry:
        raise ValidationError("topic and industry are required for indicator prompts")
    base = render(
        load_template_text("indicator_generation.txt", template_dir),
        {
            "topic": params.topic,
            "industry": params.industry,
            "stakeholders": params.stakeholders or "industry participants",
        },
    )
    parts = [base]
    if ctx is not None and ctx.general_knowledge:
        parts.append("General Knowledge:\n" + "\n\n".join(ctx.general_knowledge))
    if ctx is not None and ctx.historical_events:
        lines = "\n".join(f"{date} - {entity}" for date, entity in ctx.historical_events)
        parts.append("Historical Events:\n" + lines)
    return "\n\n".join(parts)


def parse_candidate_items(raw_text: str) -> tuple[str, ...]:
    """Permissive line-based parse: strip leading list markers, keep order."""
    items = []
    for line in raw_text.splitlines():
        cleaned = _LIST_MARKER.sub("", line).strip()
        if cleaned:
            items.append(cleaned)
    return tuple(items)


def generate_candidates(
    params: GenerationParams,
    ctx: BackgroundContext | None,
    providers: Sequence[str],
    gateway: Gateway,
    temperature: float = 0.8,
    seed_examples: Sequence[str] = (),
    template_dir: str | Path | None = None,
) -> CandidateGenerationResult:
    """Query each provider once with the same indicator prompt.

    Individual provider failures (including refusals) are recorded and
    skipped; only a full wipeout is an error. Queries run concurrently,
    bounded by the gateway's parallelism.
    """
    if not providers:
        raise ValidationError("at least one provider is required")
    prompt = build_indicator_prompt(params, ctx, template_dir)
    if seed_examples:
        prompt += "\n\nExample Messages:\n" + "\n".join(seed_examples)
    reqs = [ChatRequest(model=model, user_prompt=prompt, temperature=temperature) for model in providers]
    status = gateway.wait_batch(gateway.submit_batch(reqs))

    candidates: list[IndicatorCandidateSet] = []
    failures: list[tuple[str, str]] = []
    for result in status.results:
        model = providers[result.index]
        if result.response is None:
            failures.append((model, f"{result.error_kind}: {result.error}"))
            continue
        if result.response.finish_reason == "refused":
            failures.append((model, f"RefusalError: {result.response.text or 'refused'}"))
            continue
        candidates.append(
            IndicatorCandidateSet(
                provider=model,
                raw_text=result.response.text,
                items=parse_candidate_items(result.response.text),
            )
        )
    if not candidates:
        detail = "; ".join(f"{p}: {e}" for p, e in failures)
        raise RuntimeError(f"all indicator providers failed: {detail}")
    for provider, error in failures:
        logger.warning("indicator provider %s skipped: %s", provider, error)
    return CandidateGenerationResult(candidates=tuple(candidates), failures=tuple(failures))


def summarize_indicators(
    candidates: Sequence[IndicatorCandidateSet],
    gateway: Gateway,
    summarizer_model: str,
    topic: str = "domain",
    temperature: float = DEFAULT_SUMMARY_TEMPERATURE,
    template_dir: str | Path | None = None,
    clock: Callable[[], datetime] | None = None,
) -> IndicatorSet:
    """One summarization call merging all candidate items into one paragraph."""
    if not candidates:
        raise ValidationError("no candidate sets to summarize")
    header = render(load_template_text("indicator_summarization.txt", template_dir), {"topic": topic})
    items = [item for c in candidates for item in c.items]
    prompt = f"{header}\n\n{SUMMARIZE_MARKER}\n" + "\n".join(items)
    resp = gateway.complete_chat(
        ChatRequest(model=summarizer_model, user_prompt=prompt, temperature=temperature)
    )
    if resp.finish_reason == "refused":
        from .providers import RefusalError

        raise RefusalError(raw_text=resp.text)
    created = clock() if clock is not None else datetime.now(timezone.utc)
    return IndicatorSet(
        summary=resp.text.strip(),
        sources=tuple(c.provider for c in candidates),
        created_at=created,
    )


# --- Persistence -------------------------------------------------------------


def save_candidates(candidates: Sequence[IndicatorCandidateSet], directory: str | Path) -> list[Path]:
    """Write one JSON file per candidate set for expert review."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    paths = []
    for c in candidates:
        safe = re.sub(r"[^A-Za-z0-9_.-]", "_", c.provider)
        path = directory / f"{safe}_{stamp}.json"
        path.write_text(
            json.dumps(
                {"provider": c.provider, "raw_text": c.raw_text, "items": list(c.items)},
                ensure_ascii=False,
                indent=2,
            ),
            encoding="utf-8",
        )
        paths.append(path)
    return paths


def save_indicator_set(indicator_set: IndicatorSet, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(indicator_set.to_dict(), ensure_ascii=False, indent=2), encoding="utf-8")


def load_indicator_set(path: str | Path) -> IndicatorSet:
    return IndicatorSet.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
