"""Prompt assembly: seed shuffling/batching plus the generation and
annotation prompt builders.

All builders are pure functions of their inputs; the same arguments always
render byte-identical prompts. Template text lives in plain files with
{topic}/{industry}/{stakeholders}/{count} placeholders so the pipeline adapts
to new domains by editing templates, not code.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .models import Dataset, Message, ValidationError, format_timestamp

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")

INDICATORS_HEADING = "Indicators:"
SEEDS_HEADING = "Social Media Messages:"
SUMMARIZE_MARKER = "Indicators to summarize:"


def render(template: str, values: dict[str, object]) -> str:
    """Substitute {name} placeholders present in `values`; leave others alone.

    Deliberately not str.format: template bodies may embed literal braces
    (JSON snippets) that must survive rendering.
    """

    def sub(match: re.Match) -> str:
        key = match.group(1)
        if key in values:
            return str(values[key])
        return match.group(0)

    return _PLACEHOLDER.sub(sub, template)


def load_template_text(name: str, template_dir: str | Path | None = None) -> str:
    """Read a template by file name, preferring an override directory."""
    if template_dir is not None:
        candidate = Path(template_dir) / name
        if candidate.exists():
            return candidate.read_text(encoding="utf-8").strip()
    return resources.files("synthweave.templates").joinpath(name).read_text(encoding="utf-8").strip()


@dataclass(frozen=True, slots=True)
class PromptTemplate:
    """Generation prompt skeleton: task framing plus hard constraints.

    task_description and critical_instructions may keep a {count} placeholder;
    it is interpolated per request at build time because the final request of
    a job can ask for fewer messages than the default.
    """

    task_description: str
    critical_instructions: tuple[str, ...]
    alignment_clause: str | None = None
    output_count: int = 100

    def __post_init__(self) -> None:
        if not self.task_description:
            raise ValidationError("task_description must be non-empty")
        if self.output_count < 1:
            raise ValidationError(f"output_count must be >= 1, got {self.output_count}")


def default_template(
    topic: str,
    industry: str,
    stakeholders: str = "",
    output_count: int = 100,
    with_alignment_clause: bool = False,
    template_dir: str | Path | None = None,
) -> PromptTemplate:
    """Instantiate the shipped generation template for a domain."""
    values = {"topic": topic, "industry": industry, "stakeholders": stakeholders or "industry participants"}
    task = render(load_template_text("generation_task.txt", template_dir), values)
    critical_lines = [
        render(line, values)
        for line in load_template_text("generation_critical.txt", template_dir).splitlines()
        if line.strip()
    ]
    clause = load_template_text("alignment_clause.txt", template_dir) if with_alignment_clause else None
    return PromptTemplate(
        task_description=task,
        critical_instructions=tuple(critical_lines),
        alignment_clause=clause,
        output_count=output_count,
    )


@dataclass(frozen=True, slots=True)
class SeedBatch:
    """One shuffled group of seed messages paired with a generation request."""

    messages: tuple[Message, ...]
    batch_index: int

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValidationError("seed batch must be non-empty")


def shuffle_and_batch(
    seeds: Dataset | Sequence[Message],
    batch_size: int = 10,
    rng_seed: int | None = None,
) -> list[SeedBatch]:
    """Partition a seeded-RNG permutation of the seeds into fixed-size groups.

    All batches have batch_size messages except possibly the last; nothing is
    dropped.
    """
    messages = list(seeds)
    if not messages:
        raise ValidationError("seed dataset must be non-empty")
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    rng = random.Random(rng_seed)
    rng.shuffle(messages)
    return [
        SeedBatch(messages=tuple(messages[i : i + batch_size]), batch_index=i // batch_size)
        for i in range(0, len(messages), batch_size)
    ]


def build_generation_prompt(
    tmpl: PromptTemplate,
    indicator_summary: str,
    batch: SeedBatch | None,
    count: int | None = None,
) -> str:
    """Assemble the generation prompt: task, critical instructions,
    indicators, then seed samples, in that fixed order."""
    if not indicator_summary:
        raise ValidationError("indicator summary must be non-empty")
    n = count if count is not None else tmpl.output_count
    values = {"count": n}
    parts = [render(tmpl.task_description, values)]
    critical = [f"- {render(line, values)}" for line in tmpl.critical_instructions]
    if tmpl.alignment_clause:
        critical.append(f"- {tmpl.alignment_clause}")
    if critical:
        parts.append("Critical:\n" + "\n".join(critical))
    parts.append(f"{INDICATORS_HEADING}\n{indicator_summary}")
    if batch is not None:
        lines = "\n".join(m.content.replace("\n", " ") for m in batch.messages)
        parts.append(f"{SEEDS_HEADING}\n{lines}")
    return "\n\n".join(parts)


def build_annotation_prompt(
    indicator_summary: str,
    messages: Sequence[Message],
    topic: str = "cyberattack",
    industry: str = "blockchain",
    template_dir: str | Path | None = None,
) -> str:
    """Assemble the scoring prompt: instructions, indicators, and the
    messages serialized as a JSON array of {message_id, content[, timestamp]}."""
    if not messages:
        raise ValidationError("message list must be non-empty")
    task = render(
        load_template_text("annotation_task.txt", template_dir),
        {"topic": topic, "industry": industry},
    )
    payload = []
    for m in messages:
        obj: dict[str, object] = {"message_id": m.id, "content": m.content}
        if m.timestamp is not None:
            obj["timestamp"] = format_timestamp(m.timestamp)
        payload.append(obj)
    messages_json = json.dumps(payload, ensure_ascii=False, indent=2)
    return "\n\n".join(
        [task, f"{INDICATORS_HEADING}\n{indicator_summary}", f"{SEEDS_HEADING}\n{messages_json}"]
    )


def batch_sizes(n: int, batch_size: int) -> list[int]:
    """Expected batch sizes for n seeds: full groups plus the remainder."""
    full, rem = divmod(n, batch_size)
    return [batch_size] * full + ([rem] if rem else [])


def flatten_batches(batches: Iterable[SeedBatch]) -> list[Message]:
    out: list[Message] = []
    for b in batches:
        out.extend(b.messages)
    return out
