"""Core domain types shared by every pipeline stage.

Messages, datasets, and generation parameters are immutable values; they can
be shared freely between threads. Datasets persist as JSONL (one message per
line) and CSV with a fixed column set.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

CATEGORY_TARGET = "target"
CATEGORY_GENERAL = "general"

SOURCE_SEED = "seed"
SOURCE_SYNTHETIC = "synthetic"
SOURCE_TEST = "test"
SOURCES = (SOURCE_SEED, SOURCE_SYNTHETIC, SOURCE_TEST)

PROVENANCE_INITIAL = "initial"
PROVENANCE_DEDUPLICATED = "deduplicated"
PROVENANCE_FINAL = "final"
PROVENANCES = (PROVENANCE_INITIAL, PROVENANCE_DEDUPLICATED, PROVENANCE_FINAL)

# Fixed serialization order for JSONL and CSV.
MESSAGE_FIELDS = ("id", "content", "category", "score", "timestamp", "source", "session_id")


class ValidationError(ValueError):
    """Raised when a domain value violates its invariants."""


def message_id(content: str, source: str) -> str:
    """Deterministic content-hash identifier for a message.

    The digest covers the UTF-8 content bytes, a zero-byte separator, and the
    source tag, so the same text ingested as seed vs. synthetic gets distinct
    ids while re-ingestion is stable across runs and platforms.
    """
    if not content:
        raise ValidationError("message content must be non-empty")
    digest = hashlib.sha256()
    digest.update(content.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(source.encode("utf-8"))
    return digest.hexdigest()


@dataclass(frozen=True, slots=True)
class Message:
    """A single social-media-style text flowing through the pipeline."""

    id: str
    content: str
    source: str
    category: str = CATEGORY_GENERAL
    score: float | None = None
    timestamp: datetime | None = None
    session_id: str | None = None

    def __post_init__(self) -> None:
        if not self.content:
            raise ValidationError("message content must be non-empty")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"score must lie in [0,1], got {self.score}")

    @classmethod
    def create(
        cls,
        content: str,
        source: str,
        category: str = CATEGORY_GENERAL,
        score: float | None = None,
        timestamp: datetime | None = None,
        session_id: str | None = None,
    ) -> "Message":
        return cls(
            id=message_id(content, source),
            content=content,
            source=source,
            category=category,
            score=score,
            timestamp=timestamp,
            session_id=session_id,
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "content": self.content,
            "category": self.category,
            "score": self.score,
            "timestamp": format_timestamp(self.timestamp),
            "source": self.source,
            "session_id": self.session_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Message":
        return cls(
            id=d["id"],
            content=d["content"],
            category=d.get("category", CATEGORY_GENERAL),
            score=d.get("score"),
            timestamp=parse_timestamp(d.get("timestamp")),
            source=d.get("source", SOURCE_SEED),
            session_id=d.get("session_id"),
        )


def format_timestamp(ts: datetime | None) -> str | None:
    """RFC 3339 with a trailing Z, or None."""
    if ts is None:
        return None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_timestamp(raw: str | None) -> datetime | None:
    if raw is None or raw == "":
        return None
    return datetime.fromisoformat(raw.replace("Z", "+00:00"))


@dataclass(frozen=True, slots=True)
class Dataset:
    """Ordered collection of messages with a provenance tag.

    Strict datasets reject duplicate ids. Raw generation output may legally
    contain repeated content (that is what dedup is for), so callers building
    pre-dedup datasets pass strict=False.
    """

    messages: tuple[Message, ...]
    name: str = "dataset"
    provenance: str = PROVENANCE_INITIAL
    strict: bool = True

    def __post_init__(self) -> None:
        if self.strict:
            seen: set[str] = set()
            for m in self.messages:
                if m.id in seen:
                    raise ValidationError(f"duplicate message id {m.id!r} in dataset {self.name!r}")
                seen.add(m.id)

    @classmethod
    def from_messages(
        cls,
        messages: Iterable[Message],
        name: str = "dataset",
        provenance: str = PROVENANCE_INITIAL,
        strict: bool = True,
    ) -> "Dataset":
        return cls(messages=tuple(messages), name=name, provenance=provenance, strict=strict)

    def __len__(self) -> int:
        return len(self.messages)

    def __iter__(self) -> Iterator[Message]:
        return iter(self.messages)

    def with_provenance(self, provenance: str) -> "Dataset":
        return replace(self, provenance=provenance)


@dataclass(frozen=True, slots=True)
class DatasetCounts:
    per_category: dict[str, int] = field(default_factory=dict)
    total: int = 0

    def to_dict(self) -> dict:
        return {"per_category": dict(self.per_category), "total": self.total}


def dataset_counts(dataset: Dataset | Iterable[Message]) -> DatasetCounts:
    """Per-category message counts plus the total; counts partition the dataset."""
    per_category: dict[str, int] = {}
    total = 0
    for m in dataset:
        per_category[m.category] = per_category.get(m.category, 0) + 1
        total += 1
    return DatasetCounts(per_category=per_category, total=total)


@dataclass(frozen=True, slots=True)
class GenerationParams:
    """User-facing knobs for one synthetic-generation run."""

    topic: str
    industry: str
    stakeholders: str = ""
    target_size: int = 100
    temperature: float = 0.8
    provider_models: dict[str, str] = field(default_factory=dict)
    rng_seed: int | None = None
    category: str = CATEGORY_TARGET

    def __post_init__(self) -> None:
        if not (0.0 <= self.temperature <= 1.0):
            raise ValidationError(f"temperature must lie in [0,1], got {self.temperature}")
        if self.target_size < 1:
            raise ValidationError(f"target_size must be >= 1, got {self.target_size}")


# --- Dataset persistence ---------------------------------------------------


def message_to_json_line(m: Message) -> str:
    return json.dumps(m.to_dict(), ensure_ascii=False, separators=(",", ":"))


def write_jsonl(messages: Iterable[Message], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for m in messages:
            fh.write(message_to_json_line(m))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> list[Message]:
    out: list[Message] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Message.from_dict(json.loads(line)))
    return out


def messages_to_csv(messages: Iterable[Message]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(MESSAGE_FIELDS), lineterminator="\n")
    writer.writeheader()
    for m in messages:
        row = m.to_dict()
        writer.writerow({k: ("" if row[k] is None else row[k]) for k in MESSAGE_FIELDS})
    return buf.getvalue()


def write_csv(messages: Iterable[Message], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    messages = list(messages)
    path.write_text(messages_to_csv(messages), encoding="utf-8")
    return len(messages)


def read_csv(path: str | Path) -> list[Message]:
    return parse_csv(Path(path).read_text(encoding="utf-8"))


def parse_csv(text: str) -> list[Message]:
    reader = csv.DictReader(io.StringIO(text))
    out: list[Message] = []
    for row in reader:
        d = dict(row)
        if not d.get("content"):
            continue
        score = d.get("score")
        d["score"] = float(score) if score not in (None, "") else None
        for key in ("timestamp", "session_id"):
            if d.get(key) == "":
                d[key] = None
        if not d.get("id"):
            d["id"] = message_id(d["content"], d.get("source") or SOURCE_SEED)
        if not d.get("source"):
            d["source"] = SOURCE_SEED
        out.append(Message.from_dict(d))
    return out


def parse_jsonl(text: str) -> list[Message]:
    out: list[Message] = []
    for line in text.splitlines():
        line = line.strip()
        if line:
            out.append(Message.from_dict(json.loads(line)))
    return out
