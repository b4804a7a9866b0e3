"""Pydantic request/response models for the REST API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class SessionCreateRequest(BaseModel):
    user_id: str = "anonymous"


class SessionResponse(BaseModel):
    session_id: str
    user_id: str
    created_at: float


class GenerationParamsIn(BaseModel):
    topic: str
    industry: str
    stakeholders: str = ""
    target_size: int = Field(default=100, ge=1)
    temperature: float = Field(default=0.8, ge=0.0, le=1.0)
    category: str = "target"
    rng_seed: int | None = None


class BackgroundContextIn(BaseModel):
    general_knowledge: list[str] = Field(default_factory=list)
    historical_events: list[tuple[str, str]] = Field(default_factory=list)


class IndicatorTaskRequest(BaseModel):
    params: GenerationParamsIn
    context: BackgroundContextIn = Field(default_factory=BackgroundContextIn)
    providers: list[str] = Field(default_factory=list)


class IndicatorUpdateRequest(BaseModel):
    summary: str = Field(min_length=1)


class IndicatorSetOut(BaseModel):
    summary: str
    sources: list[str]
    created_at: str | None = None


class TaskAccepted(BaseModel):
    task_id: str
    state: str = "running"


class TaskStatus(BaseModel):
    task_id: str
    state: str  # running | done | failed
    kind: str
    result: dict | None = None
    error: str | None = None


class SeedsUploadRequest(BaseModel):
    format: str = Field(pattern="^(jsonl|csv)$")
    content: str
    category: str | None = None  # override category on every imported row


class SeedsImportReport(BaseModel):
    imported: int
    skipped: int
    total_seeds: int


class JobCreateRequest(BaseModel):
    params: GenerationParamsIn
    model: str | None = None
    use_seeds: bool = True


class JobCreated(BaseModel):
    job_id: str


class JobStatusOut(BaseModel):
    job_id: str
    state: str
    requests_done: int
    requests_total: int
    messages_so_far: int
    failures: list = Field(default_factory=list)


class DedupRequest(BaseModel):
    threshold: float = Field(default=0.9, gt=0.0, le=1.0)
    batch_size: int = Field(default=100, ge=1)
    ttl_hours: float = Field(default=24.0, gt=0.0)
    include_seeds: bool = False


class DedupReportOut(BaseModel):
    received: int
    retained: int
    filtered: int
    insertion_rate: float
    per_category: dict[str, dict[str, int]] = Field(default_factory=dict)


class AnnotateRequest(BaseModel):
    model: str | None = None
    provenance: str | None = None
    limit: int | None = Field(default=None, ge=1)


class ValidateRequest(BaseModel):
    labels: dict[str, int]
    threshold: float = Field(default=0.5, gt=0.0, lt=1.0)


class ValidationReport(BaseModel):
    accuracy_pct: float
    n: int
    threshold: float


class MessageOut(BaseModel):
    id: str
    content: str
    category: str
    score: float | None = None
    timestamp: str | None = None
    source: str
    session_id: str | None = None


class DataPage(BaseModel):
    messages: list[MessageOut]
    page: int
    page_size: int
    total: int
