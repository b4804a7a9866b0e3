"""Configuration: provider/model selection per pipeline role, embedding
backend choice, and pipeline defaults.

Config is a JSON file; credentials never live in it, only the names of the
environment variables that hold them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .dedup import EmbeddingBackend, HashedNgramBackend, RemoteEmbeddingBackend
from .providers import (
    DedupingSummarizerProvider,
    Gateway,
    MockProvider,
    OpenAICompatProvider,
    Provider,
    load_script,
)

ROLE_INDICATORS = "indicator_generation"
ROLE_SUMMARIZATION = "summarization"
ROLE_GENERATION = "generation"
ROLE_ANNOTATION = "annotation"


@dataclass(frozen=True, slots=True)
class ProviderConfig:
    type: str  # "mock" | "openai_compat" | "dedup_summarizer"
    base_url: str | None = None
    api_key_env: str | None = None
    script: str | None = None


@dataclass(frozen=True, slots=True)
class RolesConfig:
    indicator_generation: tuple[str, ...] = ()
    summarization: str = ""
    generation: str = ""
    annotation: str = ""

    def model_for(self, role: str) -> str:
        value = getattr(self, role, "")
        if not value:
            raise ValueError(f"no model configured for role {role!r}")
        return value


@dataclass(frozen=True, slots=True)
class EmbeddingSettings:
    type: str = "hashed"  # "hashed" | "remote"
    dimension: int = 256
    url: str | None = None
    model: str = "bge-base-en-v1.5"
    api_key_env: str | None = None


@dataclass(frozen=True, slots=True)
class PipelineDefaults:
    temperature: float = 0.8
    dedup_threshold: float = 0.9
    dedup_batch_size: int = 100
    ttl_hours: float = 24.0
    seed_batch_size: int = 10
    per_request_count: int = 100
    annotation_threshold: float = 0.5
    gateway_parallelism: int = 4


@dataclass(frozen=True, slots=True)
class AppConfig:
    providers: dict[str, ProviderConfig] = field(default_factory=dict)
    roles: RolesConfig = field(default_factory=RolesConfig)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)
    defaults: PipelineDefaults = field(default_factory=PipelineDefaults)
    data_dir: str = "./synthweave-data"
    host: str = "127.0.0.1"
    port: int = 8000
    api_token_env: str | None = None
    template_dir: str | None = None


def load_config(path: str | Path) -> AppConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    providers = {
        name: ProviderConfig(**cfg) for name, cfg in raw.get("providers", {}).items()
    }
    roles_raw = raw.get("roles", {})
    roles = RolesConfig(
        indicator_generation=tuple(roles_raw.get("indicator_generation", ())),
        summarization=roles_raw.get("summarization", ""),
        generation=roles_raw.get("generation", ""),
        annotation=roles_raw.get("annotation", ""),
    )
    embedding = EmbeddingSettings(**raw.get("embedding", {}))
    defaults = PipelineDefaults(**raw.get("defaults", {}))
    return AppConfig(
        providers=providers,
        roles=roles,
        embedding=embedding,
        defaults=defaults,
        data_dir=raw.get("data_dir", "./synthweave-data"),
        host=raw.get("host", "127.0.0.1"),
        port=raw.get("port", 8000),
        api_token_env=raw.get("api_token_env"),
        template_dir=raw.get("template_dir"),
    )


def save_config(config: AppConfig, path: str | Path) -> None:
    payload = {
        "providers": {
            name: {k: v for k, v in vars(p).items() if v is not None}
            for name, p in config.providers.items()
        },
        "roles": {
            "indicator_generation": list(config.roles.indicator_generation),
            "summarization": config.roles.summarization,
            "generation": config.roles.generation,
            "annotation": config.roles.annotation,
        },
        "embedding": {k: v for k, v in vars(config.embedding).items() if v is not None},
        "defaults": vars(config.defaults).copy(),
        "data_dir": config.data_dir,
        "host": config.host,
        "port": config.port,
        "api_token_env": config.api_token_env,
        "template_dir": config.template_dir,
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def _build_provider(cfg: ProviderConfig, base_path: Path | None = None) -> Provider:
    if cfg.type == "mock":
        if not cfg.script:
            raise ValueError("mock provider requires a script path")
        script = Path(cfg.script)
        if base_path is not None and not script.is_absolute():
            script = base_path / script
        return MockProvider(load_script(script))
    if cfg.type == "dedup_summarizer":
        return DedupingSummarizerProvider()
    if cfg.type == "openai_compat":
        if not cfg.base_url:
            raise ValueError("openai_compat provider requires base_url")
        api_key = os.environ.get(cfg.api_key_env) if cfg.api_key_env else None
        return OpenAICompatProvider(base_url=cfg.base_url, api_key=api_key)
    raise ValueError(f"unknown provider type {cfg.type!r}")


def build_gateway(config: AppConfig, base_path: Path | None = None, **gateway_kwargs) -> Gateway:
    providers = {
        name: _build_provider(p, base_path) for name, p in config.providers.items()
    }
    gateway_kwargs.setdefault("parallelism", config.defaults.gateway_parallelism)
    return Gateway(providers, **gateway_kwargs)


def build_embedding_backend(config: AppConfig) -> EmbeddingBackend:
    emb = config.embedding
    if emb.type == "hashed":
        return HashedNgramBackend(dimension=emb.dimension)
    if emb.type == "remote":
        if not emb.url:
            raise ValueError("remote embedding backend requires a url")
        api_key = os.environ.get(emb.api_key_env) if emb.api_key_env else None
        return RemoteEmbeddingBackend(
            url=emb.url, model=emb.model, api_key=api_key, dimension=emb.dimension
        )
    raise ValueError(f"unknown embedding backend type {emb.type!r}")


def api_token(config: AppConfig) -> str | None:
    if config.api_token_env:
        return os.environ.get(config.api_token_env)
    return None
