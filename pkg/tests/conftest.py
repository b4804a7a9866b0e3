from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pytest

from synthweave.indicators import IndicatorSet
from synthweave.models import Message
from synthweave.providers import Gateway, MockProvider, ScriptEntry, TokenUsage


def make_messages(contents, source="seed", category="target", session_id=None):
    return [
        Message.create(content=c, source=source, category=category, session_id=session_id)
        for c in contents
    ]


@pytest.fixture
def seed_messages():
    return make_messages([f"seed message number {i} about incident {i}" for i in range(25)])


@pytest.fixture
def indicator_set():
    return IndicatorSet(
        summary=(
            "unusual spikes in transaction volume; abnormal confirmation times; "
            "sudden activation of dormant addresses; withdrawal issues"
        ),
        sources=("mock-a", "mock-b"),
        created_at=datetime(2025, 1, 1, tzinfo=timezone.utc),
    )


def make_gateway(entries, parallelism=1, retry_limit=3, rng_seed=0, providers=None, **kwargs):
    """Gateway over a single scripted mock provider named 'mock'."""
    provider_map = {"mock": MockProvider(entries)}
    if providers:
        provider_map.update(providers)
    return Gateway(
        provider_map,
        parallelism=parallelism,
        retry_limit=retry_limit,
        sleeper=lambda s: None,
        rng_seed=rng_seed,
        **kwargs,
    )


def array_entry(texts, match=None, usage=(50, 200), times=None):
    """Script entry returning a JSON array of strings."""
    return ScriptEntry(
        match=match,
        response=json.dumps(list(texts)),
        usage=TokenUsage(*usage),
        times=times,
    )


class FakeBackend:
    """Embedding backend with hand-assigned vectors per exact content string."""

    def __init__(self, mapping: dict[str, np.ndarray], dimension: int | None = None):
        self.mapping = {k: np.asarray(v, dtype=np.float64) for k, v in mapping.items()}
        first = next(iter(self.mapping.values()))
        self.dimension = dimension or first.shape[0]

    def embed_batch(self, texts):
        rows = []
        for t in texts:
            if t not in self.mapping:
                raise KeyError(f"no fake vector for {t!r}")
            v = self.mapping[t]
            rows.append(v / np.linalg.norm(v))
        return np.vstack(rows)


def write_script(path: Path, entries: list[dict]) -> Path:
    path.write_text("\n".join(json.dumps(e) for e in entries), encoding="utf-8")
    return path


class ScoringProvider:
    """Annotation mock: reads the message array out of the prompt and scores
    each message with the supplied function of its content."""

    def __init__(self, score_fn=None):
        self.score_fn = score_fn or (lambda content: 0.9 if "breach" in content else 0.1)

    def chat(self, req):
        from synthweave.providers import ChatResponse, TokenUsage

        payload = req.user_prompt.split("Social Media Messages:", 1)[1]
        items = json.loads(payload)
        scored = [
            {"message_id": item["message_id"], "cyberattack_score": self.score_fn(item["content"])}
            for item in items
        ]
        return ChatResponse(
            text=json.dumps(scored), usage=TokenUsage(40, 80), model=req.model
        )

