"""Two-stage deduplication: exact content matching, then embedding-similarity
filtering against a session-scoped store with TTL.

Stage 2 uses sequential admission semantics: messages are processed in input
order, each one compared against every record already in the store including
admissions made earlier in the same call, and admitted iff its maximum
cosine similarity stays below the threshold. Embeddings are computed in
batches for efficiency; admission decisions are still strictly sequential, so
results are order-deterministic.

Within one session, dedup calls must be serialized by the caller (the service
holds a per-session lock); different sessions are independent.
"""

from __future__ import annotations

import hashlib
import json
import sqlite3
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx
import numpy as np

from .models import Dataset, Message, ValidationError

DEFAULT_THRESHOLD = 0.9
DEFAULT_BATCH_SIZE = 100
DEFAULT_TTL_SECONDS = 24 * 3600.0

NAMESPACE_PRODUCTION = "production"
NAMESPACE_RESEARCH = "research"
NAMESPACE_SCRAPED = "scraped"


class EmbeddingError(RuntimeError):
    pass


class EmbeddingBackend(Protocol):
    dimension: int

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


class HashedNgramBackend:
    """Deterministic local embedder for tests and offline runs.

    Hashes character n-grams into signed buckets and unit-normalizes, so
    equal texts always map to equal vectors and unrelated texts land nearly
    orthogonal. Stable across platforms (blake2b, not the salted builtin
    hash).
    """

    def __init__(self, dimension: int = 256, ngram: int = 3):
        self.dimension = dimension
        self._ngram = ngram

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            if not text:
                raise EmbeddingError("cannot embed empty content")
            for gram in self._grams(text):
                h = int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "big")
                bucket = h % self.dimension
                sign = 1.0 if (h >> 60) & 1 else -1.0
                out[row, bucket] += sign
            norm = np.linalg.norm(out[row])
            if norm == 0.0:
                raise EmbeddingError(f"degenerate embedding for text {text[:40]!r}")
            out[row] /= norm
        return out

    def _grams(self, text: str) -> list[str]:
        if len(text) < self._ngram:
            return [text]
        return [text[i : i + self._ngram] for i in range(len(text) - self._ngram + 1)]


class RemoteEmbeddingBackend:
    """HTTP embedding service client (e.g. a hosted BGE-style encoder)."""

    def __init__(
        self,
        url: str,
        model: str = "bge-base-en-v1.5",
        api_key: str | None = None,
        dimension: int = 768,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.model = model
        self.dimension = dimension
        self._api_key = api_key
        self._client = client or httpx.Client(timeout=timeout)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if any(not t for t in texts):
            raise EmbeddingError("cannot embed empty content")
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        try:
            resp = self._client.post(self.url, json={"model": self.model, "input": list(texts)}, headers=headers)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise EmbeddingError(f"embedding service unavailable: {exc}") from exc
        body = resp.json()
        if isinstance(body.get("data"), list):  # OpenAI-style
            rows = [item["embedding"] for item in body["data"]]
        elif isinstance(body.get("vectors"), list):
            rows = body["vectors"]
        elif isinstance(body.get("result"), dict) and "data" in body["result"]:
            rows = body["result"]["data"]
        else:
            raise EmbeddingError(f"unrecognized embedding response shape: {list(body)}")
        matrix = np.asarray(rows, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(texts):
            raise EmbeddingError(f"expected {len(texts)} vectors, got shape {matrix.shape}")
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise EmbeddingError("embedding service returned a zero vector")
        return matrix / norms


def embed(content: str, backend: EmbeddingBackend) -> np.ndarray:
    """Embed one text; deterministic per backend."""
    if not content:
        raise ValidationError("cannot embed empty content")
    return backend.embed_batch([content])[0]


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors (1 - cosine distance)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("vectors must be finite-valued")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True, slots=True)
class DedupConfig:
    threshold: float = DEFAULT_THRESHOLD
    batch_size: int = DEFAULT_BATCH_SIZE
    ttl_seconds: float = DEFAULT_TTL_SECONDS
    namespace: str = NAMESPACE_PRODUCTION

    def __post_init__(self) -> None:
        if not (0.0 < self.threshold <= 1.0):
            raise ValidationError(f"threshold must lie in (0,1], got {self.threshold}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.ttl_seconds <= 0:
            raise ValidationError(f"ttl_seconds must be positive, got {self.ttl_seconds}")


@dataclass(frozen=True, slots=True)
class DedupReport:
    received: int
    retained: int
    filtered: int
    per_category: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.received != self.retained + self.filtered:
            raise ValidationError(
                f"report does not balance: {self.received} != {self.retained} + {self.filtered}"
            )

    @property
    def insertion_rate(self) -> float:
        return self.retained / self.received if self.received else 0.0

    def to_dict(self) -> dict:
        return {
            "received": self.received,
            "retained": self.retained,
            "filtered": self.filtered,
            "insertion_rate": self.insertion_rate,
            "per_category": {k: dict(v) for k, v in sorted(self.per_category.items())},
        }


@dataclass(frozen=True, slots=True)
class EmbeddingRecord:
    message_id: str
    session_id: str
    namespace: str
    vector: np.ndarray
    inserted_at: float
    expires_at: float


class EmbeddingStore:
    """Embedded persistent store of session-scoped unit vectors with TTL.

    Backed by sqlite so a service restart keeps the dedup memory; records in
    different namespaces (production/research/scraped) never see each other.
    """

    def __init__(self, path: str | Path = ":memory:", clock: Callable[[], float] = time.time):
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._lock = threading.Lock()
        self._clock = clock
        with self._lock:
            self._conn.execute(
                """
                CREATE TABLE IF NOT EXISTS embeddings (
                    namespace TEXT NOT NULL,
                    session_id TEXT NOT NULL,
                    message_id TEXT NOT NULL,
                    dim INTEGER NOT NULL,
                    vector BLOB NOT NULL,
                    inserted_at REAL NOT NULL,
                    expires_at REAL NOT NULL,
                    PRIMARY KEY (namespace, session_id, message_id)
                )
                """
            )
            self._conn.commit()

    def now(self) -> float:
        return self._clock()

    def insert(
        self,
        session_id: str,
        message_id: str,
        vector: np.ndarray,
        ttl_seconds: float = DEFAULT_TTL_SECONDS,
        namespace: str = NAMESPACE_PRODUCTION,
        now: float | None = None,
    ) -> EmbeddingRecord:
        vector = np.asarray(vector, dtype=np.float64)
        inserted_at = self._clock() if now is None else now
        expires_at = inserted_at + ttl_seconds
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO embeddings VALUES (?,?,?,?,?,?,?)",
                (
                    namespace,
                    session_id,
                    message_id,
                    vector.shape[0],
                    vector.tobytes(),
                    inserted_at,
                    expires_at,
                ),
            )
            self._conn.commit()
        return EmbeddingRecord(message_id, session_id, namespace, vector, inserted_at, expires_at)

    def session_vectors(
        self,
        session_id: str,
        namespace: str = NAMESPACE_PRODUCTION,
        now: float | None = None,
    ) -> tuple[list[str], np.ndarray]:
        """Unexpired vectors for one session, insertion-ordered."""
        now = self._clock() if now is None else now
        with self._lock:
            rows = self._conn.execute(
                "SELECT message_id, dim, vector FROM embeddings"
                " WHERE namespace=? AND session_id=? AND expires_at>?"
                " ORDER BY inserted_at, rowid",
                (namespace, session_id, now),
            ).fetchall()
        ids = [r[0] for r in rows]
        if not rows:
            return ids, np.empty((0, 0))
        dim = rows[0][1]
        matrix = np.vstack([np.frombuffer(r[2], dtype=np.float64) for r in rows])
        assert matrix.shape[1] == dim
        return ids, matrix

    def purge_expired(self, now: float | None = None) -> int:
        """Drop every record whose lifetime has elapsed (expires_at <= now)."""
        now = self._clock() if now is None else now
        with self._lock:
            cur = self._conn.execute("DELETE FROM embeddings WHERE expires_at<=?", (now,))
            self._conn.commit()
            return cur.rowcount

    def count(self, session_id: str | None = None, namespace: str | None = None) -> int:
        query = "SELECT COUNT(*) FROM embeddings WHERE 1=1"
        args: list = []
        if session_id is not None:
            query += " AND session_id=?"
            args.append(session_id)
        if namespace is not None:
            query += " AND namespace=?"
            args.append(namespace)
        with self._lock:
            return int(self._conn.execute(query, args).fetchone()[0])

    def snapshot(self) -> list[dict]:
        """Audit export of all records (vectors omitted, metadata only)."""
        with self._lock:
            rows = self._conn.execute(
                "SELECT namespace, session_id, message_id, dim, inserted_at, expires_at"
                " FROM embeddings ORDER BY namespace, session_id, inserted_at, rowid"
            ).fetchall()
        return [
            {
                "namespace": r[0],
                "session_id": r[1],
                "message_id": r[2],
                "dim": r[3],
                "inserted_at": r[4],
                "expires_at": r[5],
            }
            for r in rows
        ]

    def close(self) -> None:
        with self._lock:
            self._conn.close()


def purge_expired(store: EmbeddingStore, now: float | None = None) -> int:
    return store.purge_expired(now)


def exact_dedup(messages: Sequence[Message]) -> tuple[list[Message], int]:
    """Keep the first occurrence of each content string, preserving order."""
    seen: set[str] = set()
    unique: list[Message] = []
    for m in messages:
        if m.content not in seen:
            seen.add(m.content)
            unique.append(m)
    return unique, len(messages) - len(unique)


def semantic_filter(
    messages: Sequence[Message],
    store: EmbeddingStore,
    cfg: DedupConfig,
    backend: EmbeddingBackend,
    session_id: str,
    now: float | None = None,
) -> tuple[list[Message], list[Message]]:
    """Admit messages whose max similarity against the session store stays
    below the threshold; admitted vectors become visible to later messages
    within the same call. Returns (retained, filtered)."""
    messages = list(messages)
    if not messages:
        return [], []
    ids, stored = store.session_vectors(session_id, cfg.namespace, now=now)
    dim = backend.dimension
    if stored.size and stored.shape[1] != dim:
        raise ValidationError(
            f"store holds {stored.shape[1]}-dim vectors but backend produces {dim}-dim"
        )
    # One growing comparison buffer: stored vectors first, then admissions.
    buffer = np.empty((len(ids) + len(messages), dim), dtype=np.float64)
    count = len(ids)
    if count:
        buffer[:count] = stored

    retained: list[Message] = []
    filtered: list[Message] = []
    for start in range(0, len(messages), cfg.batch_size):
        chunk = messages[start : start + cfg.batch_size]
        vectors = backend.embed_batch([m.content for m in chunk])
        for m, v in zip(chunk, vectors):
            max_sim = float(np.max(buffer[:count] @ v)) if count else -1.0
            if max_sim < cfg.threshold:
                buffer[count] = v
                count += 1
                retained.append(m)
                store.insert(
                    session_id,
                    m.id,
                    v,
                    ttl_seconds=cfg.ttl_seconds,
                    namespace=cfg.namespace,
                    now=now,
                )
            else:
                filtered.append(m)
    return retained, filtered


def dedup_pipeline(
    messages: Sequence[Message],
    session_id: str,
    cfg: DedupConfig,
    backend: EmbeddingBackend,
    store: EmbeddingStore,
    now: float | None = None,
    name: str = "deduplicated",
) -> tuple[Dataset, DedupReport]:
    """Exact dedup, then semantic filtering; returns the retained dataset and
    a monitoring report with received = retained + filtered."""
    messages = list(messages)
    unique, exact_removed = exact_dedup(messages)
    retained, sem_filtered = semantic_filter(unique, store, cfg, backend, session_id, now=now)

    retained_ids = {m.id for m in retained}
    per_category: dict[str, dict[str, int]] = {}
    for m in messages:
        bucket = per_category.setdefault(m.category, {"received": 0, "retained": 0, "filtered": 0})
        bucket["received"] += 1
    for m in retained:
        per_category[m.category]["retained"] += 1
    for bucket in per_category.values():
        bucket["filtered"] = bucket["received"] - bucket["retained"]

    report = DedupReport(
        received=len(messages),
        retained=len(retained),
        filtered=len(messages) - len(retained),
        per_category=per_category,
    )
    dataset = Dataset.from_messages(retained, name=name, provenance="deduplicated")
    assert report.received == report.retained + report.filtered
    return dataset, report


def save_report(report: DedupReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
