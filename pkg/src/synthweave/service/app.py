"""REST service exposing the pipeline to the web UI and other clients.

Long operations (indicator extraction, generation jobs, annotation) run as
background threads with pollable status; everything that matters is persisted
as it settles, so a restarted service resumes unfinished jobs from their
persisted request markers and loses nothing else. Per-session dedup runs
under a lock: a second concurrent request gets 409.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse

from ..annotation import ValidationInput, accuracy, annotate, annotations_to_csv
from ..config import (
    AppConfig,
    api_token,
    build_embedding_backend,
    build_gateway,
)
from ..dedup import DedupConfig, EmbeddingStore, dedup_pipeline, purge_expired
from ..generation import UnknownJobError, job_status, load_plan, plan_job, run_job
from ..indicators import (
    BackgroundContext,
    IndicatorSet,
    generate_candidates,
    summarize_indicators,
)
from ..models import (
    GenerationParams,
    Message,
    ValidationError,
    dataset_counts,
    message_to_json_line,
    messages_to_csv,
    parse_csv,
    parse_jsonl,
)
from ..prompts import default_template
from . import schemas
from .state import SessionState, SessionStore, UnknownSessionError

logger = logging.getLogger(__name__)


class TaskRegistry:
    """In-memory registry of background tasks; results also land on disk, so
    losing handles on restart only loses the ability to poll, not the work."""

    def __init__(self):
        self._lock = threading.Lock()
        self._tasks: dict[str, dict] = {}

    def create(self, kind: str) -> str:
        task_id = uuid.uuid4().hex[:12]
        with self._lock:
            self._tasks[task_id] = {"task_id": task_id, "kind": kind, "state": "running", "result": None, "error": None}
        return task_id

    def finish(self, task_id: str, result: dict) -> None:
        with self._lock:
            self._tasks[task_id].update(state="done", result=result)

    def fail(self, task_id: str, error: str) -> None:
        with self._lock:
            self._tasks[task_id].update(state="failed", error=error)

    def get(self, task_id: str) -> dict:
        with self._lock:
            if task_id not in self._tasks:
                raise KeyError(task_id)
            return dict(self._tasks[task_id])


def _params_from(p: schemas.GenerationParamsIn) -> GenerationParams:
    return GenerationParams(
        topic=p.topic,
        industry=p.industry,
        stakeholders=p.stakeholders,
        target_size=p.target_size,
        temperature=p.temperature,
        category=p.category,
        rng_seed=p.rng_seed,
    )


def create_app(
    config: AppConfig | None = None,
    clock: Callable[[], float] = time.time,
    gateway=None,
    backend=None,
    frontend_dir: str | Path | None = None,
    sweep_interval: float = 300.0,
) -> FastAPI:
    config = config or AppConfig()
    data_dir = Path(config.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)

    sessions = SessionStore(data_dir, clock=clock)
    tasks = TaskRegistry()
    gateway = gateway if gateway is not None else build_gateway(config)
    backend = backend if backend is not None else build_embedding_backend(config)
    store = EmbeddingStore(data_dir / "embeddings.sqlite", clock=clock)
    jobs_index_path = data_dir / "jobs_index.json"
    jobs_index: dict[str, str] = (
        json.loads(jobs_index_path.read_text(encoding="utf-8")) if jobs_index_path.exists() else {}
    )
    index_lock = threading.Lock()
    stop_sweep = threading.Event()

    def register_job(job_id: str, session_id: str) -> None:
        with index_lock:
            jobs_index[job_id] = session_id
            jobs_index_path.write_text(json.dumps(jobs_index), encoding="utf-8")

    def launch_job(session: SessionState, plan) -> None:
        job_dir = session.jobs.job_dir(plan.job_id, create=True)

        def work() -> None:
            try:
                run_job(plan, gateway, job_dir)
            except Exception:
                logger.exception("job %s failed", plan.job_id)

        threading.Thread(target=work, name=f"job-{plan.job_id}", daemon=True).start()

    def resume_unfinished() -> None:
        for session_id in sessions.list_ids():
            session = sessions.get(session_id)
            for job_id in session.jobs.unfinished_jobs():
                try:
                    plan = load_plan(session.jobs.job_dir(job_id))
                except UnknownJobError:
                    continue
                logger.info("resuming job %s in session %s", job_id, session_id)
                launch_job(session, plan)

    def sweep_loop() -> None:
        while not stop_sweep.wait(sweep_interval):
            purged = purge_expired(store)
            if purged:
                logger.info("ttl sweep purged %d embedding records", purged)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        resume_unfinished()
        sweeper = threading.Thread(target=sweep_loop, name="ttl-sweep", daemon=True)
        sweeper.start()
        yield
        stop_sweep.set()

    app = FastAPI(title="synthweave", version="0.1.0", lifespan=lifespan)
    app.state.sessions = sessions
    app.state.store = store
    app.state.gateway = gateway
    app.state.backend = backend
    app.state.config = config

    token = api_token(config)

    @app.middleware("http")
    async def check_token(request: Request, call_next):
        if token and request.url.path.startswith(("/sessions", "/jobs", "/tasks")):
            provided = request.headers.get("x-api-token") or request.headers.get(
                "authorization", ""
            ).removeprefix("Bearer ").strip()
            if provided != token:
                return JSONResponse({"detail": "invalid API token"}, status_code=401)
        return await call_next(request)

    @app.exception_handler(UnknownSessionError)
    @app.exception_handler(UnknownJobError)
    async def not_found(request: Request, exc: Exception):
        return JSONResponse({"detail": f"not found: {exc}"}, status_code=404)

    @app.exception_handler(ValidationError)
    async def invalid(request: Request, exc: Exception):
        return JSONResponse({"detail": str(exc)}, status_code=422)

    # -- sessions ---------------------------------------------------------------

    @app.post("/sessions", response_model=schemas.SessionResponse, status_code=201)
    def create_session(body: schemas.SessionCreateRequest, request: Request):
        user_id = request.headers.get("x-user-id") or body.user_id
        session = sessions.create(user_id)
        return schemas.SessionResponse(
            session_id=session.info.session_id,
            user_id=session.info.user_id,
            created_at=session.info.created_at,
        )

    @app.get("/sessions/{session_id}", response_model=schemas.SessionResponse)
    def get_session(session_id: str):
        session = sessions.get(session_id)
        return schemas.SessionResponse(
            session_id=session.info.session_id,
            user_id=session.info.user_id,
            created_at=session.info.created_at,
        )

    # -- indicators ----------------------------------------------------------------

    @app.post("/sessions/{session_id}/indicators", response_model=schemas.TaskAccepted, status_code=202)
    def start_indicators(session_id: str, body: schemas.IndicatorTaskRequest):
        session = sessions.get(session_id)
        params = _params_from(body.params)
        ctx = BackgroundContext(
            general_knowledge=tuple(body.context.general_knowledge),
            historical_events=tuple(tuple(e) for e in body.context.historical_events),
        )
        providers = tuple(body.providers) or config.roles.indicator_generation
        if not providers:
            raise ValidationError("no indicator providers configured")
        summarizer = config.roles.summarization or providers[0]
        task_id = tasks.create("indicators")

        def work() -> None:
            try:
                gen = generate_candidates(
                    params, ctx, providers, gateway, template_dir=config.template_dir
                )
                session.save_candidates(gen.candidates)
                indicator_set = summarize_indicators(
                    gen.candidates,
                    gateway,
                    summarizer,
                    topic=params.topic,
                    template_dir=config.template_dir,
                )
                session.save_indicators(indicator_set)
                tasks.finish(
                    task_id,
                    {
                        "candidate_sets": [
                            {"provider": c.provider, "items": list(c.items), "raw_text": c.raw_text}
                            for c in gen.candidates
                        ],
                        "failures": [list(f) for f in gen.failures],
                        "indicator_set": indicator_set.to_dict(),
                    },
                )
            except Exception as exc:
                logger.exception("indicator task failed")
                tasks.fail(task_id, f"{type(exc).__name__}: {exc}")

        threading.Thread(target=work, name=f"indicators-{task_id}", daemon=True).start()
        return schemas.TaskAccepted(task_id=task_id)

    @app.get("/sessions/{session_id}/indicators", response_model=schemas.IndicatorSetOut)
    def get_indicators(session_id: str):
        session = sessions.get(session_id)
        current = session.indicator_set()
        if current is None:
            raise UnknownSessionError(f"{session_id} has no indicator set yet")
        d = current.to_dict()
        return schemas.IndicatorSetOut(**d)

    @app.put("/sessions/{session_id}/indicators", response_model=schemas.IndicatorSetOut)
    def edit_indicators(session_id: str, body: schemas.IndicatorUpdateRequest):
        session = sessions.get(session_id)
        current = session.indicator_set()
        sources = current.sources if current else ("human-edit",)
        updated = IndicatorSet(summary=body.summary, sources=tuple(sources) + ("human-edit",))
        session.save_indicators(updated)
        return schemas.IndicatorSetOut(**updated.to_dict())

    @app.get("/tasks/{task_id}", response_model=schemas.TaskStatus)
    def get_task(task_id: str):
        try:
            return schemas.TaskStatus(**tasks.get(task_id))
        except KeyError:
            raise UnknownJobError(task_id)

    # -- seeds --------------------------------------------------------------------

    @app.post("/sessions/{session_id}/seeds", response_model=schemas.SeedsImportReport)
    def upload_seeds(session_id: str, body: schemas.SeedsUploadRequest):
        session = sessions.get(session_id)
        try:
            parsed = parse_jsonl(body.content) if body.format == "jsonl" else parse_csv(body.content)
        except Exception as exc:
            raise ValidationError(f"could not parse {body.format} seeds: {exc}") from exc
        existing = {m.id: m for m in session.seeds()}
        imported = 0
        skipped = 0
        for m in parsed:
            if body.category:
                m = Message.create(
                    content=m.content,
                    source=m.source,
                    category=body.category,
                    score=m.score,
                    timestamp=m.timestamp,
                    session_id=session_id,
                )
            if m.id in existing:
                skipped += 1
                continue
            existing[m.id] = m
            imported += 1
        session.save_seeds(list(existing.values()))
        return schemas.SeedsImportReport(imported=imported, skipped=skipped, total_seeds=len(existing))

    # -- jobs ----------------------------------------------------------------------

    @app.post("/sessions/{session_id}/jobs", response_model=schemas.JobCreated, status_code=202)
    def create_job(session_id: str, body: schemas.JobCreateRequest):
        session = sessions.get(session_id)
        indicators = session.indicator_set()
        if indicators is None:
            raise ValidationError("generate or upload an indicator summary before launching a job")
        params = _params_from(body.params)
        model = body.model or config.roles.generation
        if not model:
            raise ValidationError("no generation model configured")
        tmpl = default_template(
            topic=params.topic,
            industry=params.industry,
            stakeholders=params.stakeholders,
            output_count=config.defaults.per_request_count,
            template_dir=config.template_dir,
        )
        from ..prompts import load_template_text

        clause = load_template_text("alignment_clause.txt", config.template_dir)
        seeds = session.seeds() if body.use_seeds else None
        plan = plan_job(
            params,
            seeds or None,
            tmpl,
            indicators,
            model,
            per_request_count=config.defaults.per_request_count,
            seed_batch_size=config.defaults.seed_batch_size,
            session_id=session_id,
            alignment_clause=clause,
        )
        register_job(plan.job_id, session_id)
        launch_job(session, plan)
        return schemas.JobCreated(job_id=plan.job_id)

    @app.get("/jobs/{job_id}", response_model=schemas.JobStatusOut)
    def get_job(job_id: str):
        with index_lock:
            session_id = jobs_index.get(job_id)
        if session_id is None:
            raise UnknownJobError(job_id)
        session = sessions.get(session_id)
        status = job_status(session.jobs.job_dir(job_id))
        return schemas.JobStatusOut(
            job_id=job_id,
            state=status["state"],
            requests_done=status["requests_done"],
            requests_total=status["requests_total"],
            messages_so_far=status["messages_so_far"],
            failures=status.get("failures", []),
        )

    # -- dedup -----------------------------------------------------------------------

    @app.post("/sessions/{session_id}/dedup", response_model=schemas.DedupReportOut)
    def run_dedup(session_id: str, body: schemas.DedupRequest):
        session = sessions.get(session_id)
        if not session.dedup_lock.acquire(blocking=False):
            return JSONResponse(
                {"detail": "a dedup pass is already running for this session"}, status_code=409
            )
        try:
            purge_expired(store)
            messages = list(session.generated())
            if body.include_seeds:
                messages = session.seeds() + messages
            cfg = DedupConfig(
                threshold=body.threshold,
                batch_size=body.batch_size,
                ttl_seconds=body.ttl_hours * 3600.0,
            )
            dataset, report = dedup_pipeline(
                messages, session_id, cfg, backend, store, name=f"{session_id}-dedup"
            )
            session.save_deduplicated(list(dataset), report)
            return schemas.DedupReportOut(**report.to_dict())
        finally:
            session.dedup_lock.release()

    # -- annotation / validation --------------------------------------------------------

    @app.post("/sessions/{session_id}/annotate", response_model=schemas.TaskAccepted, status_code=202)
    def start_annotation(session_id: str, body: schemas.AnnotateRequest):
        session = sessions.get(session_id)
        indicators = session.indicator_set()
        if indicators is None:
            raise ValidationError("an indicator summary is required for annotation")
        messages = session.messages_for(body.provenance)
        if not messages:
            raise ValidationError("no messages to annotate")
        if body.limit:
            messages = messages[: body.limit]
        model = body.model or config.roles.annotation
        if not model:
            raise ValidationError("no annotation model configured")
        task_id = tasks.create("annotate")

        def work() -> None:
            try:
                records = annotate(messages, indicators.summary, gateway, model)
                session.save_annotations(records)
                tasks.finish(
                    task_id,
                    {
                        "annotated": len(records),
                        "mean_score": sum(r.score for r in records) / len(records),
                    },
                )
            except Exception as exc:
                logger.exception("annotation task failed")
                tasks.fail(task_id, f"{type(exc).__name__}: {exc}")

        threading.Thread(target=work, name=f"annotate-{task_id}", daemon=True).start()
        return schemas.TaskAccepted(task_id=task_id)

    @app.post("/sessions/{session_id}/validate", response_model=schemas.ValidationReport)
    def validate(session_id: str, body: schemas.ValidateRequest):
        session = sessions.get(session_id)
        records = session.annotations()
        if not records:
            raise ValidationError("no annotations stored for this session")
        wanted = set(body.labels)
        subset = tuple(r for r in records if r.message_id in wanted)
        v = ValidationInput(
            truths=tuple((mid, label) for mid, label in body.labels.items()),
            annotations=subset,
            threshold=body.threshold,
        )
        return schemas.ValidationReport(
            accuracy_pct=accuracy(v), n=len(body.labels), threshold=body.threshold
        )

    @app.get("/sessions/{session_id}/annotations.csv")
    def annotations_csv(session_id: str):
        session = sessions.get(session_id)
        records = session.annotations()
        if not records:
            raise UnknownSessionError(f"{session_id} has no annotations")
        by_id = {m.id: m for m in session.messages_for(None)}
        messages = [by_id[r.message_id] for r in records if r.message_id in by_id]
        return PlainTextResponse(
            annotations_to_csv(messages, records),
            media_type="text/csv",
            headers={"Content-Disposition": "attachment; filename=annotations.csv"},
        )

    # -- data access ----------------------------------------------------------------------

    @app.get("/sessions/{session_id}/data", response_model=schemas.DataPage)
    def get_data(
        session_id: str,
        provenance: str | None = Query(default=None),
        page: int = Query(default=1, ge=1),
        page_size: int = Query(default=50, ge=1, le=1000),
    ):
        session = sessions.get(session_id)
        try:
            messages = session.messages_for(provenance)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        start = (page - 1) * page_size
        chunk = messages[start : start + page_size]
        return schemas.DataPage(
            messages=[schemas.MessageOut(**m.to_dict()) for m in chunk],
            page=page,
            page_size=page_size,
            total=len(messages),
        )

    @app.get("/sessions/{session_id}/stats")
    def get_stats(session_id: str, provenance: str | None = Query(default=None)):
        session = sessions.get(session_id)
        counts = dataset_counts(session.messages_for(provenance))
        report = session.dedup_report()
        return {"counts": counts.to_dict(), "dedup_report": report}

    @app.get("/sessions/{session_id}/export")
    def export(
        session_id: str,
        format: str = Query(default="csv", pattern="^(csv|json|jsonl)$"),
        provenance: str | None = Query(default=None),
    ):
        session = sessions.get(session_id)
        messages = session.messages_for(provenance)
        filename = f"{session_id}-{provenance or 'latest'}.{format}"
        if format == "csv":
            payload = messages_to_csv(messages)
            media = "text/csv"
        elif format == "jsonl":
            payload = "".join(message_to_json_line(m) + "\n" for m in messages)
            media = "application/x-ndjson"
        else:
            payload = json.dumps([m.to_dict() for m in messages], ensure_ascii=False, indent=2)
            media = "application/json"
        return Response(
            content=payload,
            media_type=media,
            headers={"Content-Disposition": f"attachment; filename={filename}"},
        )

    # -- static frontend -------------------------------------------------------------------

    ui_dir = Path(frontend_dir) if frontend_dir else Path("frontend/dist")
    if ui_dir.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
