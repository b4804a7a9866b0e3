"""LLM-based preliminary scoring of messages plus validation against
human-reviewed labels.

The scoring call demands a complete response (no dropped messages); one
re-ask covers stragglers before the run errors out. Out-of-range scores are
clamped with a warning rather than rejected, since stochastic outputs
occasionally wander outside [0,1].
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .models import Message, ValidationError
from .prompts import build_annotation_prompt
from .providers import ChatRequest, Gateway, ResponseSchema

logger = logging.getLogger(__name__)

SCORE_FIELD = "cyberattack_score"
DEFAULT_THRESHOLD = 0.5

_OBJECT_ARRAY = ResponseSchema(kind="object_array", fields=("message_id", SCORE_FIELD))


class MissingAnnotationsError(RuntimeError):
    def __init__(self, missing: Sequence[str]):
        super().__init__(f"{len(missing)} messages left unscored after retry: {sorted(missing)[:5]}")
        self.missing = tuple(missing)


@dataclass(frozen=True, slots=True)
class AnnotationRecord:
    message_id: str
    score: float
    model: str

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"annotation score must lie in [0,1], got {self.score}")


@dataclass(frozen=True, slots=True)
class ValidationInput:
    """Human-verified labels paired with model scores, joined by message id."""

    truths: tuple[tuple[str, int], ...]
    annotations: tuple[AnnotationRecord, ...]
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        if not (0.0 < self.threshold < 1.0):
            raise ValidationError(f"threshold must lie in (0,1), got {self.threshold}")
        if any(label not in (0, 1) for _, label in self.truths):
            raise ValidationError("true labels must be 0 or 1")


def predict_label(score: float, threshold: float = DEFAULT_THRESHOLD) -> int:
    """1 iff the score reaches the threshold; the boundary counts as positive."""
    if not (0.0 <= score <= 1.0):
        raise ValidationError(f"score must lie in [0,1], got {score}")
    return 1 if score >= threshold else 0


def accuracy(v: ValidationInput) -> float:
    """Percentage of records whose thresholded score matches the true label.

    Pairing is strictly by message_id; list order never matters. Every truth
    must have exactly one annotation."""
    if not v.truths:
        raise ValidationError("validation needs at least one labeled record")
    scores: dict[str, float] = {}
    for rec in v.annotations:
        if rec.message_id in scores:
            raise ValidationError(f"duplicate annotation for {rec.message_id}")
        scores[rec.message_id] = rec.score
    truth_ids = [mid for mid, _ in v.truths]
    if len(set(truth_ids)) != len(truth_ids):
        raise ValidationError("duplicate ids in truth labels")
    missing = [mid for mid in truth_ids if mid not in scores]
    if missing:
        raise ValidationError(f"no annotation for ids: {missing[:5]}")
    correct = sum(
        1 for mid, label in v.truths if predict_label(scores[mid], v.threshold) == label
    )
    return correct / len(v.truths) * 100.0


def _parse_score(raw: object) -> float | None:
    try:
        return float(raw)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        return None


def _clamp(score: float, message_id: str) -> float:
    if score < 0.0 or score > 1.0:
        clamped = min(1.0, max(0.0, score))
        logger.warning("clamped out-of-range score %s -> %s for %s", score, clamped, message_id)
        return clamped
    return score


def annotate(
    messages: Sequence[Message],
    indicator_summary: str,
    gateway: Gateway,
    model: str,
    temperature: float = 0.0,
    topic: str = "cyberattack",
    industry: str = "blockchain",
) -> list[AnnotationRecord]:
    """Score every message with the annotation prompt; re-asks once for any
    ids the model dropped, then errors if some are still missing."""
    if not messages:
        raise ValidationError("no messages to annotate")
    by_id = {m.id: m for m in messages}
    records = _annotation_round(list(messages), indicator_summary, gateway, model, temperature, topic, industry)
    missing = [mid for mid in by_id if mid not in records]
    if missing:
        logger.info("re-asking for %d unscored messages", len(missing))
        retry = _annotation_round(
            [by_id[mid] for mid in missing], indicator_summary, gateway, model, temperature, topic, industry
        )
        records.update(retry)
        missing = [mid for mid in by_id if mid not in records]
    if missing:
        raise MissingAnnotationsError(missing)
    return [AnnotationRecord(message_id=m.id, score=records[m.id], model=model) for m in messages]


def _annotation_round(
    messages: list[Message],
    indicator_summary: str,
    gateway: Gateway,
    model: str,
    temperature: float,
    topic: str,
    industry: str,
) -> dict[str, float]:
    prompt = build_annotation_prompt(indicator_summary, messages, topic=topic, industry=industry)
    items = gateway.complete_structured(
        ChatRequest(
            model=model,
            user_prompt=prompt,
            temperature=temperature,
            response_schema=_OBJECT_ARRAY,
        )
    )
    expected = {m.id for m in messages}
    scores: dict[str, float] = {}
    for item in items:
        mid = item.get("message_id")
        if mid not in expected:
            logger.warning("ignoring annotation for unknown id %r", mid)
            continue
        score = _parse_score(item.get(SCORE_FIELD, item.get("score")))
        if score is None:
            logger.warning("ignoring non-numeric score for %s: %r", mid, item.get(SCORE_FIELD))
            continue
        scores[mid] = _clamp(score, mid)
    return scores


# --- Review round-trip --------------------------------------------------------

REVIEW_COLUMNS = ("message_id", "content", SCORE_FIELD, "human_label")


def annotations_to_csv(messages: Sequence[Message], records: Sequence[AnnotationRecord]) -> str:
    """Export for external human review; human_label stays blank until filled."""
    scores: Mapping[str, float] = {r.message_id: r.score for r in records}
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(REVIEW_COLUMNS), lineterminator="\n")
    writer.writeheader()
    for m in messages:
        writer.writerow(
            {
                "message_id": m.id,
                "content": m.content,
                SCORE_FIELD: scores.get(m.id, ""),
                "human_label": "",
            }
        )
    return buf.getvalue()


def export_annotations_csv(
    messages: Sequence[Message], records: Sequence[AnnotationRecord], path: str | Path
) -> None:
    Path(path).write_text(annotations_to_csv(messages, records), encoding="utf-8")


def import_reviewed_csv(path: str | Path) -> list[tuple[str, int]]:
    """Read back rows whose human_label column has been filled in."""
    truths: list[tuple[str, int]] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            label = (row.get("human_label") or "").strip()
            if label != "":
                truths.append((row["message_id"], int(float(label))))
    return truths
