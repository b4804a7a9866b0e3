"""Persistent per-session state for the REST service.

Everything that must survive a restart lives on disk under the data
directory: session metadata, imported seeds, per-job artifacts, dedup output,
and annotations. The synthetic "initial" view is derived on read from the
jobs' produced files, so there is no append step that a crash could corrupt.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from ..annotation import AnnotationRecord
from ..dedup import DedupReport
from ..generation import STATE_DONE, JobStore, load_produced
from ..indicators import IndicatorCandidateSet, IndicatorSet, load_indicator_set, save_indicator_set
from ..models import (
    PROVENANCE_DEDUPLICATED,
    PROVENANCE_FINAL,
    PROVENANCE_INITIAL,
    Message,
    read_jsonl,
    write_jsonl,
)


class UnknownSessionError(KeyError):
    pass


@dataclass(frozen=True, slots=True)
class SessionInfo:
    session_id: str
    user_id: str
    created_at: float


class SessionState:
    """Disk-backed state of one session plus its in-process locks."""

    def __init__(self, root: Path, info: SessionInfo):
        self.root = root
        self.info = info
        self.dedup_lock = threading.Lock()
        self.mutate_lock = threading.RLock()
        self.jobs = JobStore(root / "jobs")

    # -- seeds ---------------------------------------------------------------

    @property
    def seeds_path(self) -> Path:
        return self.root / "seeds.jsonl"

    def seeds(self) -> list[Message]:
        if self.seeds_path.exists():
            return read_jsonl(self.seeds_path)
        return []

    def save_seeds(self, messages: list[Message]) -> None:
        with self.mutate_lock:
            write_jsonl(messages, self.seeds_path)

    # -- indicators ----------------------------------------------------------

    @property
    def indicators_path(self) -> Path:
        return self.root / "indicators.json"

    def indicator_set(self) -> IndicatorSet | None:
        if self.indicators_path.exists():
            return load_indicator_set(self.indicators_path)
        return None

    def save_indicators(self, indicator_set: IndicatorSet) -> None:
        with self.mutate_lock:
            save_indicator_set(indicator_set, self.indicators_path)

    def save_candidates(self, candidates: tuple[IndicatorCandidateSet, ...]) -> None:
        from ..indicators import save_candidates

        save_candidates(candidates, self.root / "candidates")

    # -- synthetic data views --------------------------------------------------

    def generated(self) -> list[Message]:
        """Raw synthetic output of every completed job, in job order."""
        out: list[Message] = []
        for job_id in self.jobs.list_jobs():
            job_dir = self.jobs.job_dir(job_id)
            try:
                state = self.jobs.status(job_id).get("state")
            except KeyError:
                continue
            if state == STATE_DONE:
                out.extend(load_produced(job_dir))
        return out

    @property
    def deduplicated_path(self) -> Path:
        return self.root / "deduplicated.jsonl"

    def deduplicated(self) -> list[Message]:
        if self.deduplicated_path.exists():
            return read_jsonl(self.deduplicated_path)
        return []

    def save_deduplicated(self, messages: list[Message], report: DedupReport) -> None:
        with self.mutate_lock:
            write_jsonl(messages, self.deduplicated_path)
            (self.root / "dedup_report.json").write_text(
                json.dumps(report.to_dict(), indent=2), encoding="utf-8"
            )

    def dedup_report(self) -> dict | None:
        path = self.root / "dedup_report.json"
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        return None

    @property
    def final_path(self) -> Path:
        return self.root / "final.jsonl"

    def final(self) -> list[Message]:
        if self.final_path.exists():
            return read_jsonl(self.final_path)
        return []

    def messages_for(self, provenance: str | None) -> list[Message]:
        """Resolve a provenance filter; default prefers the most curated view."""
        if provenance == PROVENANCE_INITIAL:
            return self.seeds() + self.generated()
        if provenance == PROVENANCE_DEDUPLICATED:
            return self.deduplicated()
        if provenance == PROVENANCE_FINAL:
            return self.final()
        if provenance is None:
            for view in (self.final(), self.deduplicated()):
                if view:
                    return view
            return self.seeds() + self.generated()
        raise ValueError(f"unknown provenance {provenance!r}")

    # -- annotations -----------------------------------------------------------

    @property
    def annotations_path(self) -> Path:
        return self.root / "annotations.json"

    def annotations(self) -> list[AnnotationRecord]:
        if not self.annotations_path.exists():
            return []
        raw = json.loads(self.annotations_path.read_text(encoding="utf-8"))
        return [AnnotationRecord(**r) for r in raw]

    def save_annotations(self, records: list[AnnotationRecord]) -> None:
        with self.mutate_lock:
            payload = [
                {"message_id": r.message_id, "score": r.score, "model": r.model} for r in records
            ]
            self.annotations_path.write_text(json.dumps(payload, indent=2), encoding="utf-8")


class SessionStore:
    """Registry of sessions under the service data directory."""

    def __init__(self, data_dir: str | Path, clock: Callable[[], float] = time.time):
        self.data_dir = Path(data_dir)
        self.sessions_dir = self.data_dir / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._lock = threading.Lock()
        self._cache: dict[str, SessionState] = {}

    def create(self, user_id: str) -> SessionState:
        session_id = uuid.uuid4().hex[:16]
        root = self.sessions_dir / session_id
        root.mkdir(parents=True)
        info = SessionInfo(session_id=session_id, user_id=user_id, created_at=self._clock())
        (root / "session.json").write_text(
            json.dumps({"session_id": session_id, "user_id": user_id, "created_at": info.created_at}),
            encoding="utf-8",
        )
        state = SessionState(root, info)
        with self._lock:
            self._cache[session_id] = state
        return state

    def get(self, session_id: str) -> SessionState:
        with self._lock:
            if session_id in self._cache:
                return self._cache[session_id]
        root = self.sessions_dir / session_id
        meta = root / "session.json"
        if not meta.exists():
            raise UnknownSessionError(session_id)
        raw = json.loads(meta.read_text(encoding="utf-8"))
        info = SessionInfo(
            session_id=raw["session_id"],
            user_id=raw.get("user_id", ""),
            created_at=raw.get("created_at", 0.0),
        )
        state = SessionState(root, info)
        with self._lock:
            self._cache.setdefault(session_id, state)
            return self._cache[session_id]

    def list_ids(self) -> list[str]:
        return sorted(p.name for p in self.sessions_dir.iterdir() if (p / "session.json").exists())
