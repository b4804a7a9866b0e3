"""Command-line front door for every pipeline stage.

Every subcommand works straight off files plus the configured providers, so
the full pipeline is scriptable without the HTTP service; `serve` starts the
service over the same core. With --json, output is machine-readable with a
stable schema.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .annotation import (
    AnnotationRecord,
    ValidationInput,
    accuracy,
    annotate,
    export_annotations_csv,
    import_reviewed_csv,
)
from .config import (
    AppConfig,
    build_embedding_backend,
    build_gateway,
    load_config,
)
from .dedup import DedupConfig, EmbeddingStore, dedup_pipeline
from .generation import plan_job, run_job
from .indicators import (
    BackgroundContext,
    generate_candidates,
    load_indicator_set,
    save_candidates,
    save_indicator_set,
    summarize_indicators,
)
from .metrics import (
    PricingModel,
    cluster_analysis,
    estimate_cost,
    eval_classifier,
    parse_batch_scores,
    retention_experiment,
    self_bleu,
)
from .models import (
    GenerationParams,
    dataset_counts,
    read_csv,
    read_jsonl,
    write_csv,
    write_jsonl,
)
from .prompts import default_template
from .providers import CostLedger


def _load_messages(path: str | Path):
    path = Path(path)
    if path.suffix == ".csv":
        return read_csv(path)
    return read_jsonl(path)


def _emit(ctx: click.Context, payload: dict, human: str | None = None) -> None:
    if ctx.obj.get("json"):
        click.echo(json.dumps(payload, sort_keys=True, indent=2))
    else:
        click.echo(human if human is not None else json.dumps(payload, sort_keys=True, indent=2))


def _fail(ctx: click.Context, exc: Exception) -> None:
    if ctx.obj.get("json"):
        click.echo(json.dumps({"error": str(exc), "type": type(exc).__name__}), err=True)
    else:
        click.echo(f"error: {exc}", err=True)
    sys.exit(1)


def _config(ctx: click.Context) -> AppConfig:
    path = ctx.obj.get("config")
    if path:
        return load_config(path)
    default = Path("synthweave.json")
    if default.exists():
        return load_config(default)
    return AppConfig()


@click.group()
@click.option("--config", type=click.Path(exists=True), default=None, help="Path to config JSON.")
@click.option("--json", "json_out", is_flag=True, help="Emit machine-readable JSON on stdout.")
@click.version_option(__version__)
@click.pass_context
def main(ctx: click.Context, config: str | None, json_out: bool) -> None:
    """Indicator-guided synthetic text pipeline."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = config
    ctx.obj["json"] = json_out


# --- indicators -----------------------------------------------------------------


@main.group()
def indicators() -> None:
    """Extract and fuse domain indicators from multiple models."""


def _read_context(knowledge_file: str | None, events_file: str | None) -> BackgroundContext:
    knowledge: tuple[str, ...] = ()
    events: tuple[tuple[str, str], ...] = ()
    if knowledge_file:
        text = Path(knowledge_file).read_text(encoding="utf-8").strip()
        knowledge = tuple(a.strip() for a in text.split("\n\n") if a.strip())
    if events_file:
        pairs = []
        for line in Path(events_file).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            if " - " in line:
                date, entity = line.split(" - ", 1)
            elif "\t" in line:
                date, entity = line.split("\t", 1)
            else:
                raise click.ClickException(f"event line needs 'date - entity': {line!r}")
            pairs.append((date.strip(), entity.strip()))
        events = tuple(pairs)
    return BackgroundContext(general_knowledge=knowledge, historical_events=events)


@indicators.command("generate")
@click.option("--topic", required=True)
@click.option("--industry", required=True)
@click.option("--stakeholders", default="")
@click.option("--providers", default="", help="Comma-separated model refs; defaults to config roles.")
@click.option("--knowledge-file", type=click.Path(exists=True), default=None)
@click.option("--events-file", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default="indicators.json", show_default=True)
@click.option("--candidates-dir", type=click.Path(), default=None, help="Where to keep raw candidate sets.")
@click.option("--no-summarize", is_flag=True, help="Stop after candidate generation.")
@click.pass_context
def indicators_generate(
    ctx, topic, industry, stakeholders, providers, knowledge_file, events_file, out, candidates_dir, no_summarize
):
    """Query the configured models for candidate indicators and fuse them."""
    try:
        cfg = _config(ctx)
        gateway = build_gateway(cfg)
        models = tuple(p for p in providers.split(",") if p) or cfg.roles.indicator_generation
        if not models:
            raise click.ClickException("no indicator providers given or configured")
        params = GenerationParams(topic=topic, industry=industry, stakeholders=stakeholders)
        ctx_data = _read_context(knowledge_file, events_file)
        result = generate_candidates(params, ctx_data, models, gateway, template_dir=cfg.template_dir)
        if candidates_dir:
            save_candidates(result.candidates, candidates_dir)
        payload: dict = {
            "candidates": [
                {"provider": c.provider, "items": list(c.items)} for c in result.candidates
            ],
            "failures": [list(f) for f in result.failures],
        }
        if not no_summarize:
            summarizer = cfg.roles.summarization or models[0]
            indicator_set = summarize_indicators(
                result.candidates, gateway, summarizer, topic=topic, template_dir=cfg.template_dir
            )
            save_indicator_set(indicator_set, out)
            payload["indicator_set"] = indicator_set.to_dict()
            payload["out"] = str(out)
        _emit(ctx, payload, human=_indicator_summary_text(payload))
    except click.ClickException:
        raise
    except Exception as exc:
        _fail(ctx, exc)


def _indicator_summary_text(payload: dict) -> str:
    lines = []
    for c in payload["candidates"]:
        lines.append(f"{c['provider']}: {len(c['items'])} candidate indicators")
    for provider, error in payload["failures"]:
        lines.append(f"{provider}: FAILED ({error})")
    if "indicator_set" in payload:
        lines.append("")
        lines.append(payload["indicator_set"]["summary"])
        lines.append(f"\nsaved to {payload['out']}")
    return "\n".join(lines)


@indicators.command("summarize")
@click.option("--candidates", type=click.Path(exists=True), multiple=True, required=True, help="Candidate-set JSON files.")
@click.option("--topic", default="domain")
@click.option("--out", type=click.Path(), default="indicators.json", show_default=True)
@click.pass_context
def indicators_summarize(ctx, candidates, topic, out):
    """Fuse previously saved candidate sets into one summary."""
    try:
        from .indicators import IndicatorCandidateSet

        cfg = _config(ctx)
        gateway = build_gateway(cfg)
        sets = []
        for path in candidates:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            sets.append(
                IndicatorCandidateSet(
                    provider=raw["provider"], raw_text=raw.get("raw_text", ""), items=tuple(raw["items"])
                )
            )
        summarizer = cfg.roles.summarization or sets[0].provider
        indicator_set = summarize_indicators(sets, gateway, summarizer, topic=topic, template_dir=cfg.template_dir)
        save_indicator_set(indicator_set, out)
        _emit(ctx, {"indicator_set": indicator_set.to_dict(), "out": str(out)}, human=indicator_set.summary)
    except Exception as exc:
        _fail(ctx, exc)


# --- generation ----------------------------------------------------------------


@main.command()
@click.option("--seeds", type=click.Path(exists=True), default=None, help="Seed dataset (jsonl/csv); omit for seedless mode.")
@click.option("--indicators", "indicators_path", type=click.Path(exists=True), required=True)
@click.option("--topic", required=True)
@click.option("--industry", required=True)
@click.option("--stakeholders", default="")
@click.option("--count", type=int, default=100, show_default=True, help="Target number of messages.")
@click.option("--category", default="target", show_default=True)
@click.option("--temperature", type=float, default=0.8, show_default=True)
@click.option("--seed-rng", type=int, default=None, help="RNG seed for shuffling/batching.")
@click.option("--model", default=None, help="Generation model ref; defaults to config roles.")
@click.option("--per-request", type=int, default=None, help="Messages requested per call.")
@click.option("--job-dir", type=click.Path(), default=None, help="Job directory for resumable state.")
@click.option("--out", type=click.Path(), default="generated.jsonl", show_default=True)
@click.pass_context
def generate(
    ctx, seeds, indicators_path, topic, industry, stakeholders, count, category,
    temperature, seed_rng, model, per_request, job_dir, out
):
    """Plan and run a synthetic-generation job."""
    try:
        cfg = _config(ctx)
        gateway = build_gateway(cfg)
        seed_messages = _load_messages(seeds) if seeds else None
        indicator_set = load_indicator_set(indicators_path)
        params = GenerationParams(
            topic=topic,
            industry=industry,
            stakeholders=stakeholders,
            target_size=count,
            temperature=temperature,
            rng_seed=seed_rng,
            category=category,
        )
        tmpl = default_template(
            topic=topic,
            industry=industry,
            stakeholders=stakeholders,
            output_count=per_request or cfg.defaults.per_request_count,
            template_dir=cfg.template_dir,
        )
        from .prompts import load_template_text

        plan = plan_job(
            params,
            seed_messages,
            tmpl,
            indicator_set,
            model or cfg.roles.generation,
            per_request_count=per_request or cfg.defaults.per_request_count,
            seed_batch_size=cfg.defaults.seed_batch_size,
            alignment_clause=load_template_text("alignment_clause.txt", cfg.template_dir),
        )
        result = run_job(plan, gateway, job_dir)
        write_jsonl(list(result.produced), out)
        payload = {
            "job_id": result.job_id,
            "produced": len(result.produced),
            "per_request_counts": list(result.per_request_counts),
            "failures": [list(f) for f in result.failures],
            "out": str(out),
        }
        _emit(
            ctx,
            payload,
            human=(
                f"job {result.job_id}: {len(result.produced)} messages "
                f"({len(result.failures)} failed requests) -> {out}"
            ),
        )
    except Exception as exc:
        _fail(ctx, exc)


# --- dedup ----------------------------------------------------------------------


@main.command()
@click.option("--in", "input_path", type=click.Path(exists=True), required=True)
@click.option("--threshold", type=float, default=0.9, show_default=True)
@click.option("--batch-size", type=int, default=100, show_default=True)
@click.option("--session", default="cli", show_default=True)
@click.option("--ttl-hours", type=float, default=24.0, show_default=True)
@click.option("--store", "store_path", type=click.Path(), default=None, help="Embedding store path (defaults to in-memory).")
@click.option("--out", type=click.Path(), default="deduplicated.jsonl", show_default=True)
@click.pass_context
def dedup(ctx, input_path, threshold, batch_size, session, ttl_hours, store_path, out):
    """Two-stage dedup: exact matches, then embedding similarity."""
    try:
        cfg = _config(ctx)
        backend = build_embedding_backend(cfg)
        messages = _load_messages(input_path)
        store = EmbeddingStore(store_path or ":memory:")
        dconfig = DedupConfig(
            threshold=threshold, batch_size=batch_size, ttl_seconds=ttl_hours * 3600.0
        )
        dataset, report = dedup_pipeline(messages, session, dconfig, backend, store)
        write_jsonl(list(dataset), out)
        store.close()
        payload = {"report": report.to_dict(), "out": str(out)}
        _emit(
            ctx,
            payload,
            human=(
                f"received {report.received}  retained {report.retained}  "
                f"filtered {report.filtered}  insertion_rate {report.insertion_rate:.3f}\n"
                f"-> {out}"
            ),
        )
    except Exception as exc:
        _fail(ctx, exc)


# --- annotation / validation -------------------------------------------------------


@main.command("annotate")
@click.option("--in", "input_path", type=click.Path(exists=True), required=True)
@click.option("--indicators", "indicators_path", type=click.Path(exists=True), required=True)
@click.option("--model", default=None)
@click.option("--out", type=click.Path(), default="annotations.csv", show_default=True)
@click.pass_context
def annotate_cmd(ctx, input_path, indicators_path, model, out):
    """Score messages with the annotation model; export CSV for review."""
    try:
        cfg = _config(ctx)
        gateway = build_gateway(cfg)
        messages = _load_messages(input_path)
        indicator_set = load_indicator_set(indicators_path)
        records = annotate(messages, indicator_set.summary, gateway, model or cfg.roles.annotation)
        export_annotations_csv(messages, records, out)
        payload = {
            "annotated": len(records),
            "mean_score": sum(r.score for r in records) / len(records),
            "out": str(out),
        }
        _emit(ctx, payload, human=f"annotated {len(records)} messages -> {out}")
    except Exception as exc:
        _fail(ctx, exc)


@main.command()
@click.option("--annotations", "annotations_path", type=click.Path(exists=True), required=True,
              help="Reviewed CSV with cyberattack_score and human_label columns.")
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.pass_context
def validate(ctx, annotations_path, threshold):
    """Compute annotation accuracy against human labels."""
    try:
        import csv as _csv

        truths = import_reviewed_csv(annotations_path)
        records = []
        with open(annotations_path, encoding="utf-8") as fh:
            for row in _csv.DictReader(fh):
                if (row.get("human_label") or "").strip() == "":
                    continue
                records.append(
                    AnnotationRecord(
                        message_id=row["message_id"],
                        score=float(row["cyberattack_score"]),
                        model="reviewed",
                    )
                )
        v = ValidationInput(truths=tuple(truths), annotations=tuple(records), threshold=threshold)
        pct = accuracy(v)
        _emit(ctx, {"accuracy_pct": pct, "n": len(truths), "threshold": threshold}, human=f"{pct:.2f}")
    except Exception as exc:
        _fail(ctx, exc)


# --- metrics -------------------------------------------------------------------------


@main.group()
def metrics() -> None:
    """Diversity, clustering, evaluation, and cost metrics."""


@metrics.command("self-bleu")
@click.option("--in", "input_path", type=click.Path(exists=True), required=True)
@click.option("--ngram", type=int, default=4, show_default=True)
@click.option("--sample-size", type=int, default=None)
@click.option("--seed", "rng_seed", type=int, default=None)
@click.pass_context
def metrics_self_bleu(ctx, input_path, ngram, sample_size, rng_seed):
    """Corpus diversity via mean BLEU of each document against the rest."""
    try:
        messages = _load_messages(input_path)
        result = self_bleu(
            [m.content for m in messages], n_gram_order=ngram, sample_size=sample_size, rng_seed=rng_seed
        )
        payload = result.to_dict()
        payload.pop("per_document_scores")
        _emit(
            ctx,
            payload,
            human=f"self-BLEU mean {result.mean:.4f}  std {result.std:.4f}  (n={result.sample_size})",
        )
    except Exception as exc:
        _fail(ctx, exc)


@metrics.command("retention")
@click.option("--seeds", type=click.Path(exists=True), required=True)
@click.option("--indicators", "indicators_path", type=click.Path(exists=True), required=True)
@click.option("--topic", required=True)
@click.option("--industry", required=True)
@click.option("--temps", default="0.7,0.8", show_default=True)
@click.option("--thresholds", default="0.8,0.9,1.0", show_default=True)
@click.option("--target", type=int, default=100, show_default=True)
@click.option("--model", default=None)
@click.pass_context
def metrics_retention(ctx, seeds, indicators_path, topic, industry, temps, thresholds, target, model):
    """Retention grid over generation temperature and dedup threshold."""
    try:
        cfg = _config(ctx)
        gateway = build_gateway(cfg)
        backend = build_embedding_backend(cfg)
        seed_messages = _load_messages(seeds)
        indicator_set = load_indicator_set(indicators_path)
        params = GenerationParams(topic=topic, industry=industry, target_size=target)
        tmpl = default_template(topic=topic, industry=industry, template_dir=cfg.template_dir)
        report = retention_experiment(
            params,
            seed_messages,
            tmpl,
            indicator_set,
            [float(t) for t in temps.split(",")],
            [float(e) for e in thresholds.split(",")],
            gateway,
            backend,
            DedupConfig(),
            model or cfg.roles.generation,
            per_request_count=cfg.defaults.per_request_count,
        )
        lines = [
            f"T={c.temperature:.2f} eps={c.threshold:.2f}: {c.retention_pct:.1f}% ({c.retained}/{c.received})"
            for c in report.cells
        ]
        _emit(ctx, report.to_dict(), human="\n".join(lines + ["", report.note]))
    except Exception as exc:
        _fail(ctx, exc)


@metrics.command("cluster")
@click.option("--in", "input_path", type=click.Path(exists=True), required=True)
@click.option("--eps", type=float, default=0.2, show_default=True)
@click.option("--min-points", type=int, default=5, show_default=True)
@click.pass_context
def metrics_cluster(ctx, input_path, eps, min_points):
    """DBSCAN over message embeddings (cosine distance)."""
    try:
        cfg = _config(ctx)
        backend = build_embedding_backend(cfg)
        messages = _load_messages(input_path)
        vectors = backend.embed_batch([m.content for m in messages])
        result = cluster_analysis(vectors, eps=eps, min_points=min_points)
        payload = {"n_clusters": result.n_clusters, "noise_count": result.noise_count, "n": len(messages)}
        _emit(
            ctx,
            payload,
            human=f"{result.n_clusters} clusters, {result.noise_count} noise points out of {len(messages)}",
        )
    except Exception as exc:
        _fail(ctx, exc)


@metrics.command("eval")
@click.option("--predictions", type=click.Path(exists=True), required=True,
              help="JSON map id->score, or text returned by a scoring model.")
@click.option("--gold", type=click.Path(exists=True), required=True, help="JSON map id->{0,1}.")
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--confusion-out", type=click.Path(), default=None)
@click.pass_context
def metrics_eval(ctx, predictions, gold, threshold, confusion_out):
    """Binary-classifier metrics with calibration (Brier) and ROC AUC."""
    try:
        gold_map = {str(k): int(v) for k, v in json.loads(Path(gold).read_text(encoding="utf-8")).items()}
        raw = Path(predictions).read_text(encoding="utf-8")
        scores = parse_batch_scores(raw, list(gold_map)).scores
        result = eval_classifier(scores, {k: gold_map[k] for k in scores}, threshold=threshold)
        if confusion_out:
            from .metrics import confusion_csv

            Path(confusion_out).write_text(confusion_csv(result), encoding="utf-8")
        roc = f"{result.roc_auc:.4f}" if result.roc_auc is not None else "n/a"
        _emit(
            ctx,
            result.to_dict(),
            human=(
                f"acc {result.accuracy:.4f}  brier {result.brier:.4f}  recall {result.recall:.4f}  "
                f"f1 {result.f1:.4f}  roc_auc {roc}  fp {result.fp_rate:.4f}  fn {result.fn_rate:.4f}"
            ),
        )
    except Exception as exc:
        _fail(ctx, exc)


@metrics.command("cost")
@click.option("--in", "input_tokens", type=int, default=None, help="Input token count.")
@click.option("--out", "output_tokens", type=int, default=None, help="Output token count.")
@click.option("--ledger", "ledger_path", type=click.Path(exists=True), default=None, help="Ledger JSON from a job status file.")
@click.option("--input-price", type=float, default=2.50, show_default=True, help="USD per million input tokens.")
@click.option("--output-price", type=float, default=10.00, show_default=True, help="USD per million output tokens.")
@click.option("--messages", "message_count", type=int, default=None, help="Message count for per-message cost.")
@click.pass_context
def metrics_cost(ctx, input_tokens, output_tokens, ledger_path, input_price, output_price, message_count):
    """Estimate LLM spend from token usage."""
    try:
        if ledger_path:
            ledger = CostLedger.from_dict(json.loads(Path(ledger_path).read_text(encoding="utf-8")))
        elif input_tokens is not None and output_tokens is not None:
            from .providers import ChatResponse, TokenUsage

            ledger = CostLedger().add(
                ChatResponse(text="", usage=TokenUsage(input_tokens, output_tokens), model="cli")
            )
        else:
            raise click.ClickException("provide --ledger or both --in and --out")
        estimate = estimate_cost(
            ledger, PricingModel(input_price, output_price), message_count=message_count
        )
        per = f"  per-message ${estimate.per_message:.5f}" if estimate.per_message is not None else ""
        _emit(
            ctx,
            estimate.to_dict(),
            human=f"input ${estimate.input_cost:.4f} + output ${estimate.output_cost:.4f} = ${estimate.total:.4f}{per}",
        )
    except click.ClickException:
        raise
    except Exception as exc:
        _fail(ctx, exc)


@metrics.command("stats")
@click.option("--in", "input_path", type=click.Path(exists=True), required=True)
@click.pass_context
def metrics_stats(ctx, input_path):
    """Per-category dataset counts."""
    try:
        messages = _load_messages(input_path)
        counts = dataset_counts(messages)
        rows = "\n".join(f"{cat}: {n}" for cat, n in sorted(counts.per_category.items()))
        _emit(ctx, counts.to_dict(), human=f"{rows}\ntotal: {counts.total}")
    except Exception as exc:
        _fail(ctx, exc)


# --- service -------------------------------------------------------------------------


@main.command()
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.pass_context
def serve(ctx, host, port):
    """Run the REST service (web UI served at /ui when built)."""
    import uvicorn

    from .service import create_app

    cfg = _config(ctx)
    app = create_app(cfg)
    uvicorn.run(app, host=host or cfg.host, port=port or cfg.port)


# convert: dataset format conversion (jsonl <-> csv), small utility
@main.command()
@click.option("--in", "input_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
def convert(ctx, input_path, out):
    """Convert a dataset between JSONL and CSV by extension."""
    try:
        messages = _load_messages(input_path)
        if Path(out).suffix == ".csv":
            write_csv(messages, out)
        else:
            write_jsonl(messages, out)
        _emit(ctx, {"converted": len(messages), "out": str(out)}, human=f"{len(messages)} messages -> {out}")
    except Exception as exc:
        _fail(ctx, exc)


if __name__ == "__main__":
    main()
