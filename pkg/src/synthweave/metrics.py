"""Quality and diversity measurement: corpus self-BLEU, density clustering
over embeddings, binary-classifier evaluation with calibration, batch score
parsing, retention grids, and token-cost estimation.

All computations are pure; nothing here touches providers except the
retention experiment, which drives the generation orchestrator.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .dedup import DedupConfig, EmbeddingBackend, EmbeddingStore, dedup_pipeline
from .generation import plan_job, run_job
from .indicators import IndicatorSet
from .models import Dataset, GenerationParams, Message, ValidationError
from .prompts import PromptTemplate
from .providers import CostLedger, Gateway, ResponseSchema, SchemaParseError, parse_structured

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"\w+|[^\w\s]", re.UNICODE)

SMOOTHING_EPSILON = 0.1
DEFAULT_SAMPLE_SIZE = 1000


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace+punctuation tokenization."""
    return _TOKEN.findall(text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(
    hypothesis: Sequence[str],
    references: Sequence[Sequence[str]],
    n_gram_order: int = 4,
    epsilon: float = SMOOTHING_EPSILON,
) -> float:
    """BLEU of one tokenized document against tokenized references.

    Modified n-gram precision with reference clipping, brevity penalty
    against the closest reference length (ties go to the shorter), and
    add-epsilon smoothing: a zero clipped count at order n contributes
    epsilon/denominator instead of zero. Orders longer than the hypothesis
    are excluded and the uniform weights renormalize over what remains.
    """
    if not references:
        raise ValidationError("BLEU needs at least one reference")
    c = len(hypothesis)
    if c == 0:
        return 0.0
    effective = min(n_gram_order, c)
    log_sum = 0.0
    for n in range(1, effective + 1):
        hyp_counts = _ngrams(hypothesis, n)
        denom = c - n + 1
        clipped = 0
        for gram, count in hyp_counts.items():
            best = max(_ngrams(ref, n).get(gram, 0) for ref in references)
            clipped += min(count, best)
        p = clipped / denom if clipped > 0 else epsilon / denom
        log_sum += math.log(p) / effective
    r = min((len(ref) for ref in references), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def smoothing_floor(hyp_len: int, n_gram_order: int = 4, epsilon: float = SMOOTHING_EPSILON) -> float:
    """BLEU value of a hypothesis with zero n-gram overlap and no brevity
    penalty; the lowest score the smoothed metric can emit at that length."""
    effective = min(n_gram_order, hyp_len)
    if effective == 0:
        return 0.0
    log_sum = sum(math.log(epsilon / (hyp_len - n + 1)) for n in range(1, effective + 1))
    return math.exp(log_sum / effective)


@dataclass(frozen=True, slots=True)
class SelfBleuResult:
    per_document_scores: tuple[float, ...]
    mean: float
    std: float
    n_gram_order: int
    sample_size: int
    tokenizer: str = "whitespace_punct_lower"
    smoothing: str = "add_epsilon"
    epsilon: float = SMOOTHING_EPSILON

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "n_gram_order": self.n_gram_order,
            "sample_size": self.sample_size,
            "tokenizer": self.tokenizer,
            "smoothing": self.smoothing,
            "epsilon": self.epsilon,
            "per_document_scores": list(self.per_document_scores),
        }


def self_bleu(
    corpus: Sequence[str],
    n_gram_order: int = 4,
    sample_size: int | None = None,
    rng_seed: int | None = None,
) -> SelfBleuResult:
    """Mean BLEU of each (sampled) document against the rest of the corpus.

    Lower means more diverse. A full pass is O(n^2); above the default
    sample size the scored documents are drawn with the seeded RNG while the
    reference side always remains the whole corpus.
    """
    if len(corpus) < 2:
        raise ValidationError("self-BLEU needs at least two documents")
    tokens = [tokenize(doc) for doc in corpus]
    indices = list(range(len(corpus)))
    limit = sample_size if sample_size is not None else DEFAULT_SAMPLE_SIZE
    if len(indices) > limit:
        rng = random.Random(rng_seed)
        indices = sorted(rng.sample(indices, limit))
    scores = []
    for i in indices:
        references = [tokens[j] for j in range(len(tokens)) if j != i]
        scores.append(sentence_bleu(tokens[i], references, n_gram_order=n_gram_order))
    arr = np.asarray(scores, dtype=np.float64)
    return SelfBleuResult(
        per_document_scores=tuple(float(s) for s in scores),
        mean=float(arr.mean()),
        std=float(arr.std()),
        n_gram_order=n_gram_order,
        sample_size=len(indices),
    )


# --- Density clustering --------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ClusterResult:
    labels: tuple[int, ...]
    n_clusters: int
    noise_count: int

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "n_clusters": self.n_clusters,
            "noise_count": self.noise_count,
        }


def cluster_analysis(
    embeddings: Sequence[np.ndarray] | np.ndarray,
    eps: float = 0.2,
    min_points: int = 5,
) -> ClusterResult:
    """DBSCAN over cosine distance (1 - similarity).

    Core points have at least min_points neighbors within eps (the point
    itself included). Clusters are seeded from core points in input order and
    grown breadth-first, so a border point inside two clusters' reach joins
    the earlier-seeded one; output is deterministic given input order.
    Noise keeps label -1.
    """
    matrix = np.asarray(embeddings, dtype=np.float64)
    if matrix.size == 0:
        raise ValidationError("cluster_analysis needs a non-empty embedding list")
    if matrix.ndim != 2:
        raise ValidationError(f"expected a 2-d embedding matrix, got shape {matrix.shape}")
    n = matrix.shape[0]
    if n < min_points:
        raise ValidationError(f"need at least min_points={min_points} embeddings, got {n}")
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0):
        raise ValidationError("cosine distance undefined for zero vectors")
    unit = matrix / norms[:, None]
    distance = 1.0 - unit @ unit.T

    neighbors = [np.flatnonzero(distance[i] <= eps) for i in range(n)]
    core = np.array([len(nb) >= min_points for nb in neighbors])

    labels = np.full(n, -1, dtype=int)
    cluster = 0
    for seed in range(n):
        if labels[seed] != -1 or not core[seed]:
            continue
        labels[seed] = cluster
        queue = [seed]
        while queue:
            point = queue.pop(0)
            if not core[point]:
                continue
            for nb in neighbors[point]:
                if labels[nb] == -1:
                    labels[nb] = cluster
                    queue.append(int(nb))
        cluster += 1
    return ClusterResult(
        labels=tuple(int(v) for v in labels),
        n_clusters=cluster,
        noise_count=int(np.sum(labels == -1)),
    )


# --- Classifier evaluation ------------------------------------------------------


@dataclass(frozen=True, slots=True)
class EvalMetrics:
    """Detection metrics over calibrated scores; rates are fractions of all
    examples, so fp_rate + fn_rate and accuracy partition the total."""

    accuracy: float
    brier: float
    recall: float
    f1: float
    roc_auc: float | None
    fp_rate: float
    fn_rate: float
    n: int
    tp: int
    tn: int
    fp: int
    fn: int
    threshold: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "brier": self.brier,
            "recall": self.recall,
            "f1": self.f1,
            "roc_auc": self.roc_auc,
            "fp_rate": self.fp_rate,
            "fn_rate": self.fn_rate,
            "n": self.n,
            "confusion": {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn},
            "threshold": self.threshold,
        }


def _roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank statistic (Mann-Whitney) with half credit for tied scores."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def eval_classifier(
    predictions: Mapping[str, float] | Mapping[int, float],
    gold: Mapping[str, int] | Mapping[int, int],
    threshold: float = 0.5,
) -> EvalMetrics:
    """Accuracy, Brier, recall, F1, ROC AUC, and total-fraction error rates.

    The positive class is the target category (gold label 1). ROC AUC is
    omitted (None) when only one class is present.
    """
    if not gold:
        raise ValidationError("gold labels must be non-empty")
    if set(predictions) != set(gold):
        missing = set(gold) - set(predictions)
        extra = set(predictions) - set(gold)
        raise ValidationError(f"id mismatch: missing={sorted(missing)[:3]} extra={sorted(extra)[:3]}")
    ids = sorted(gold, key=str)
    scores = np.array([float(predictions[i]) for i in ids], dtype=np.float64)
    labels = np.array([int(gold[i]) for i in ids], dtype=np.int64)
    if np.any((scores < 0) | (scores > 1)):
        raise ValidationError("prediction scores must lie in [0,1]")
    if np.any((labels != 0) & (labels != 1)):
        raise ValidationError("gold labels must be 0 or 1")

    n = len(ids)
    predicted = (scores >= threshold).astype(np.int64)
    tp = int(np.sum((predicted == 1) & (labels == 1)))
    tn = int(np.sum((predicted == 0) & (labels == 0)))
    fp = int(np.sum((predicted == 1) & (labels == 0)))
    fn = int(np.sum((predicted == 0) & (labels == 1)))

    brier = float(np.mean((scores - labels) ** 2))
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
    roc = None
    if 0 < labels.sum() < n:
        roc = float(_roc_auc(scores, labels))
    return EvalMetrics(
        accuracy=(tp + tn) / n,
        brier=brier,
        recall=recall,
        f1=f1,
        roc_auc=roc,
        fp_rate=fp / n,
        fn_rate=fn / n,
        n=n,
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
        threshold=threshold,
    )


def confusion_csv(metrics: EvalMetrics) -> str:
    lines = ["outcome,count", f"tp,{metrics.tp}", f"fp,{metrics.fp}", f"tn,{metrics.tn}", f"fn,{metrics.fn}"]
    return "\n".join(lines) + "\n"


# --- Batch score parsing ---------------------------------------------------------


@dataclass(frozen=True, slots=True)
class BatchScores:
    scores: dict
    missing: tuple = ()
    warnings: tuple[str, ...] = ()


def parse_batch_scores(raw: str | Mapping, expected_ids: Sequence) -> BatchScores:
    """Match a {"id": score} response to the expected ids.

    Keys compare as strings so integer ids round-trip through JSON. Scores
    outside [0,1] are clamped with a warning; missing ids are reported, and
    nothing matching at all is an error.
    """
    if not expected_ids:
        raise ValidationError("expected_ids must be non-empty")
    if isinstance(raw, str):
        parsed = parse_structured(raw, ResponseSchema(kind="score_map"))
    else:
        parsed = {}
        for key, value in raw.items():
            try:
                parsed[str(key)] = float(value)
            except (TypeError, ValueError) as exc:
                raise SchemaParseError(f"non-numeric score for {key!r}", raw_text=str(raw)) from exc

    scores: dict = {}
    warnings: list[str] = []
    missing: list = []
    for expected in expected_ids:
        key = str(expected)
        if key not in parsed:
            missing.append(expected)
            continue
        value = parsed[key]
        if value < 0.0 or value > 1.0:
            clamped = min(1.0, max(0.0, value))
            warnings.append(f"clamped score {value} -> {clamped} for id {expected}")
            value = clamped
        scores[expected] = value
    if not scores:
        raise ValidationError("no expected ids present in the score map")
    for note in warnings:
        logger.warning("%s", note)
    return BatchScores(scores=scores, missing=tuple(missing), warnings=tuple(warnings))


# --- Cost model -------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class PricingModel:
    input_price_per_million: float
    output_price_per_million: float

    def __post_init__(self) -> None:
        if self.input_price_per_million < 0 or self.output_price_per_million < 0:
            raise ValidationError("prices must be >= 0")


@dataclass(frozen=True, slots=True)
class CostEstimate:
    input_cost: float
    output_cost: float
    total: float
    per_message: float | None = None

    def to_dict(self) -> dict:
        return {
            "input_cost": self.input_cost,
            "output_cost": self.output_cost,
            "total": self.total,
            "per_message": self.per_message,
        }


def estimate_cost(
    ledger: CostLedger,
    pricing: PricingModel,
    message_count: int | None = None,
) -> CostEstimate:
    """Token totals priced per million, split by direction."""
    totals = ledger.totals()
    input_cost = totals.input_tokens / 1e6 * pricing.input_price_per_million
    output_cost = totals.output_tokens / 1e6 * pricing.output_price_per_million
    total = input_cost + output_cost
    per_message = total / message_count if message_count else None
    return CostEstimate(input_cost=input_cost, output_cost=output_cost, total=total, per_message=per_message)


# --- Retention experiment -----------------------------------------------------------


@dataclass(frozen=True, slots=True)
class RetentionCell:
    temperature: float
    threshold: float
    received: int
    retained: int

    @property
    def retention_pct(self) -> float:
        return self.retained / self.received * 100.0 if self.received else 0.0

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "threshold": self.threshold,
            "received": self.received,
            "retained": self.retained,
            "retention_pct": self.retention_pct,
        }


@dataclass(frozen=True, slots=True)
class RetentionReport:
    cells: tuple[RetentionCell, ...]
    note: str = (
        "Retention varies run to run: seed batches are reshuffled per run and "
        "generation is stochastic, so expect a band rather than a point value."
    )

    def to_dict(self) -> dict:
        return {"cells": [c.to_dict() for c in self.cells], "note": self.note}


def retention_experiment(
    params: GenerationParams,
    seeds: Dataset | Sequence[Message] | None,
    tmpl: PromptTemplate,
    indicators: IndicatorSet,
    temps: Sequence[float],
    thresholds: Sequence[float],
    gateway: Gateway,
    backend: EmbeddingBackend,
    cfg: DedupConfig,
    model: str,
    per_request_count: int = 100,
) -> RetentionReport:
    """Retention grid: one generation pass per temperature, deduped at each
    threshold against a fresh store."""
    if any(not (0.0 <= t <= 1.0) for t in temps):
        raise ValidationError("temperatures must lie in [0,1]")
    if any(not (0.0 < e <= 1.0) for e in thresholds):
        raise ValidationError("thresholds must lie in (0,1]")
    cells: list[RetentionCell] = []
    for temp in temps:
        run_params = replace(params, temperature=temp)
        plan = plan_job(run_params, seeds, tmpl, indicators, model, per_request_count=per_request_count)
        result = run_job(plan, gateway)
        received = list(result.produced)
        for eps in thresholds:
            store = EmbeddingStore(":memory:")
            session = f"retention-t{temp}-e{eps}"
            _, report = dedup_pipeline(
                received,
                session,
                replace(cfg, threshold=eps),
                backend,
                store,
            )
            store.close()
            cells.append(
                RetentionCell(
                    temperature=temp,
                    threshold=eps,
                    received=report.received,
                    retained=report.retained,
                )
            )
    return RetentionReport(cells=tuple(cells))


def save_metrics_json(payload: dict, path) -> None:
    from pathlib import Path

    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")
