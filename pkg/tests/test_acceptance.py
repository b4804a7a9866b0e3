"""Acceptance suite: every release criterion at its stated tolerance, one
printed line per criterion (visible with -s or in captured output)."""

from __future__ import annotations

import json
import math
import random
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from synthweave.annotation import AnnotationRecord, ValidationInput, accuracy, predict_label
from synthweave.dedup import (
    DedupConfig,
    EmbeddingStore,
    HashedNgramBackend,
    dedup_pipeline,
    purge_expired,
)
from synthweave.generation import job_status, plan_job, run_job, save_plan
from synthweave.indicators import summarize_indicators
from synthweave.metrics import (
    PricingModel,
    estimate_cost,
    eval_classifier,
    self_bleu,
    smoothing_floor,
    tokenize,
)
from synthweave.models import GenerationParams, read_jsonl, write_jsonl
from synthweave.prompts import default_template, shuffle_and_batch
from synthweave.providers import (
    ChatResponse,
    CostLedger,
    DedupingSummarizerProvider,
    Gateway,
    MockProvider,
    ScriptEntry,
    TokenUsage,
)

from .conftest import array_entry, make_gateway, make_messages
from .oracles import bleu_reference, naive_dedup_np

HOUR = 3600.0


def ok(name: str) -> None:
    print(f"ACCEPTANCE {name}: PASS")


class Clock:
    def __init__(self, start=1_700_000_000.0):
        self.t = start

    def __call__(self):
        return self.t


def random_dedup_instance(rng: random.Random, n: int):
    """Mix of fresh texts, exact duplicates, and light perturbations."""
    vocab = "alert breach wallet node vault audit swap spike fee chain probe halt".split()
    contents: list[str] = []
    while len(contents) < n:
        draw = rng.random()
        if contents and draw < 0.25:
            contents.append(rng.choice(contents))
        elif contents and draw < 0.5:
            contents.append(rng.choice(contents) + rng.choice([" !", "?", " now"]))
        else:
            contents.append(" ".join(rng.choices(vocab, k=rng.randint(3, 11))) + f" #{len(contents)}")
    return make_messages(contents[:n])


class TestDedupAcceptance:
    def test_oracle_equivalence_200_instances(self):
        started = time.monotonic()
        rng = random.Random(2024)
        backend = HashedNgramBackend(dimension=64)
        for trial in range(200):
            n = rng.randint(1, 200)
            msgs = random_dedup_instance(rng, n)
            eps = rng.choice([0.8, 0.9, 1.0])
            store = EmbeddingStore(":memory:")
            dataset, report = dedup_pipeline(
                msgs, "acc", DedupConfig(threshold=eps), backend, store
            )
            store.close()
            oracle_retained, oracle_filtered, oracle_exact = naive_dedup_np(msgs, backend, eps)
            assert [m.id for m in dataset] == [m.id for m in oracle_retained]
            assert report.received == len(msgs)
            assert report.retained == len(oracle_retained)
            assert report.filtered == len(oracle_filtered) + oracle_exact
        elapsed = time.monotonic() - started
        assert elapsed < 30.0, f"oracle sweep took {elapsed:.1f}s"
        ok(f"dedup oracle equivalence (200 instances in {elapsed:.1f}s)")

    def test_pairwise_invariant_and_conservation(self):
        rng = random.Random(4097)
        backend = HashedNgramBackend(dimension=64)
        for trial in range(30):
            msgs = random_dedup_instance(rng, rng.randint(2, 80))
            eps = rng.choice([0.8, 0.9, 1.0])
            store = EmbeddingStore(":memory:")
            dataset, report = dedup_pipeline(
                msgs, "acc", DedupConfig(threshold=eps), backend, store
            )
            store.close()
            assert report.received == report.retained + report.filtered
            vectors = backend.embed_batch([m.content for m in dataset]) if len(dataset) else None
            for j in range(len(dataset)):
                sims = vectors[:j] @ vectors[j] if j else np.empty(0)
                assert np.all(sims < eps)
        ok("dedup pairwise invariant + conservation")

    def test_threshold_one_removes_exactly_exact_duplicates(self):
        backend = HashedNgramBackend(dimension=64)
        base = "suspicious bridge outflow detected on chain seven"
        near = base + "!"
        other = "governance vote concludes without incident"
        msgs = make_messages([base, near, other]) + make_messages([base, other])
        sims = backend.embed_batch([base, near])
        assert float(sims[0] @ sims[1]) > 0.9  # genuinely near-duplicate input
        store = EmbeddingStore(":memory:")
        dataset, report = dedup_pipeline(msgs, "acc", DedupConfig(threshold=1.0), backend, store)
        assert [m.content for m in dataset] == [base, near, other]
        assert report.filtered == 2  # the two exact copies, nothing else
        ok("threshold 1.0 removes exactly the exact duplicates")


class TestAccuracyAcceptance:
    def test_accuracy_formula(self):
        ids = ["m1", "m2", "m3"]
        truths = tuple(zip(ids, [1, 0, 1]))
        annotations = tuple(
            AnnotationRecord(message_id=i, score=s, model="m")
            for i, s in zip(ids, [0.7, 0.6, 0.4])
        )
        v = ValidationInput(truths=truths, annotations=annotations, threshold=0.5)
        assert accuracy(v) == pytest.approx(33.33, abs=0.01)

        assert predict_label(0.5, 0.5) == 1  # boundary a == T counts positive

        perfect = ValidationInput(
            truths=truths,
            annotations=tuple(
                AnnotationRecord(message_id=i, score=s, model="m")
                for i, s in zip(ids, [0.9, 0.1, 0.9])
            ),
        )
        assert accuracy(perfect) == 100.0
        ok("annotation accuracy formula")


class TestEvalAcceptance:
    def test_brier_and_derived_case(self):
        m = eval_classifier({"a": 0.8, "b": 0.3}, {"a": 1, "b": 0})
        assert m.brier == pytest.approx(0.065, abs=1e-9)

        m4 = eval_classifier(
            {"1": 0.9, "2": 0.2, "3": 0.6, "4": 0.1},
            {"1": 1, "2": 1, "3": 0, "4": 0},
            threshold=0.5,
        )
        assert m4.accuracy == 0.5
        assert m4.roc_auc == 0.75
        assert m4.fp_rate == 0.25
        assert m4.fn_rate == 0.25
        ok("brier + derived eval case")

    def test_error_rate_identity_1000_random_sets(self):
        # fp_rate and fn_rate are fractions of the same n as accuracy, so the
        # identity holds exactly over the counts; the float fields are the
        # correctly rounded values of those exact fractions.
        rng = random.Random(808)
        for _ in range(1000):
            n = rng.randint(1, 60)
            gold = {f"i{k}": rng.randint(0, 1) for k in range(n)}
            predictions = {k: rng.random() for k in gold}
            m = eval_classifier(predictions, gold, threshold=rng.choice([0.3, 0.5, 0.7]))
            assert Fraction(m.fp, m.n) + Fraction(m.fn, m.n) == 1 - Fraction(m.tp + m.tn, m.n)
            assert m.fp_rate == m.fp / m.n
            assert m.fn_rate == m.fn / m.n
            assert m.accuracy == (m.tp + m.tn) / m.n
        ok("fp_rate + fn_rate = 1 - accuracy over 1000 random sets")


class TestCostAcceptance:
    def test_paper_cost_bounds(self):
        pricing = PricingModel(2.50, 10.00)
        upper = estimate_cost(
            CostLedger().add(ChatResponse(text="", usage=TokenUsage(800, 2100), model="m")), pricing
        )
        assert upper.total == pytest.approx(0.023, abs=0.0005)
        lower = estimate_cost(
            CostLedger().add(ChatResponse(text="", usage=TokenUsage(500, 1500), model="m")), pricing
        )
        assert lower.total == pytest.approx(0.016, abs=0.0005)
        ok("cost model bounds")


RELEASED_DATASET = Path("data/released_dataset.jsonl")


class TestSelfBleuAcceptance:
    def test_self_bleu_criteria(self):
        identical = self_bleu(["the very same sentence repeated again"] * 8)
        assert identical.mean == pytest.approx(1.0, abs=1e-6)

        disjoint = self_bleu(
            ["alpha bravo charlie delta echo foxtrot", "golf hotel india juliet kilo lima"]
        )
        assert disjoint.mean <= smoothing_floor(hyp_len=6) + 0.01

        corpus = [
            "suspicious withdrawal delays reported on a major exchange",
            "users report withdrawal delays and frozen accounts on the exchange",
            "protocol upgrade scheduled for thursday evening",
        ]
        mine = self_bleu(corpus)
        tokens = [tokenize(d) for d in corpus]
        reference = [
            bleu_reference(tokens[i], [tokens[j] for j in range(3) if j != i]) for i in range(3)
        ]
        for got, want in zip(mine.per_document_scores, reference):
            assert got == pytest.approx(want, abs=1e-9)
        ok("self-BLEU identical/disjoint/oracle criteria")

    def test_released_dataset_self_bleu_report_only(self):
        if not RELEASED_DATASET.exists():
            print("ACCEPTANCE released-dataset self-BLEU: SKIPPED (dataset not present)")
            pytest.skip("released dataset not present")
        messages = read_jsonl(RELEASED_DATASET)
        result = self_bleu([m.content for m in messages], sample_size=1000, rng_seed=42)
        in_band = abs(result.mean - 0.2831) <= 0.08
        print(
            f"ACCEPTANCE released-dataset self-BLEU: mean={result.mean:.4f} "
            f"(reported band 0.2831 +/- 0.08: {'within' if in_band else 'OUTSIDE'})"
        )


class TestBatchingAcceptance:
    def test_batching_arithmetic(self, indicator_set):
        seeds = make_messages([f"seed item {i} code {i * 17 % faces}" for i, faces in zip(range(25), range(3, 28))])
        batches = shuffle_and_batch(seeds, batch_size=10, rng_seed=0)
        assert [len(b.messages) for b in batches] == [10, 10, 5]

        params = GenerationParams(topic="t", industry="i", target_size=1000, rng_seed=0)
        tmpl = default_template(topic="t", industry="i")
        plan = plan_job(params, seeds, tmpl, indicator_set, model="mock")
        assert len(plan.requests) == 10

        rng = random.Random(555)
        from collections import Counter

        for _ in range(500):
            n = rng.randint(1, 400)
            k = rng.randint(1, 50)
            msgs = make_messages([f"m{i} r{rng.random():.6f}" for i in range(n)])
            bs = shuffle_and_batch(msgs, batch_size=k, rng_seed=rng.randint(0, 10**6))
            assert len(bs) == math.ceil(n / k)
            assert Counter(m.id for b in bs for m in b.messages) == Counter(m.id for m in msgs)
        ok("batching arithmetic + 500-size multiset property")


class TestTtlAcceptance:
    def test_ttl_expiry_and_readmission(self):
        clock = Clock()
        backend = HashedNgramBackend(dimension=64)
        store = EmbeddingStore(":memory:", clock=clock)
        cfg = DedupConfig(ttl_seconds=24 * HOUR)

        base = make_messages(["flagship exchange halts withdrawals pending audit"])
        near = make_messages(["flagship exchange halts withdrawals pending audit!"])

        _, first = dedup_pipeline(base, "s", cfg, backend, store)
        assert first.retained == 1
        _, second = dedup_pipeline(near, "s", cfg, backend, store)
        assert second.retained == 0  # near-duplicate filtered while record lives

        record = store.snapshot()[0]
        assert record["expires_at"] == record["inserted_at"] + 24 * HOUR

        clock.t += 24 * HOUR - 1
        assert purge_expired(store) == 0
        clock.t += 1
        assert purge_expired(store) == 1  # expires at exactly inserted_at + 24h

        _, third = dedup_pipeline(near, "s", cfg, backend, store)
        assert third.retained == 1  # previously filtered content re-admitted
        ok("ttl expiry at exactly +24h and post-purge re-admission")


DRIVER = """
import sys
from synthweave.generation import load_plan, run_job
from synthweave.providers import Gateway, MockProvider, ScriptEntry, TokenUsage
import json

job_dir = sys.argv[1]
plan = load_plan(job_dir)
entries = [
    ScriptEntry(match=0, response=json.dumps([f"early {i}" for i in range(4)]), usage=TokenUsage(10, 20)),
    ScriptEntry(match=1, response=json.dumps([f"early2 {i}" for i in range(4)]), usage=TokenUsage(10, 20)),
    ScriptEntry(match=None, response="[]", delay_s=120.0, times=None),
]
gateway = Gateway({"mock": MockProvider(entries)}, parallelism=1)
run_job(plan, gateway, job_dir)
"""


class TestCrashResumeAcceptance:
    def test_kill_after_two_of_five_and_resume(self, tmp_path, indicator_set):
        seeds = make_messages([f"seed {w} {i}" for i, w in enumerate("abcdefghij")])
        params = GenerationParams(topic="t", industry="i", target_size=500, rng_seed=9)
        tmpl = default_template(topic="t", industry="i")
        plan = plan_job(params, seeds, tmpl, indicator_set, model="mock")
        assert len(plan.requests) == 5
        job_dir = tmp_path / "job"
        save_plan(plan, job_dir)
        driver = tmp_path / "driver.py"
        driver.write_text(DRIVER, encoding="utf-8")

        proc = subprocess.Popen(
            [sys.executable, str(driver), str(job_dir)],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
        )
        try:
            deadline = time.monotonic() + 60
            raw = job_dir / "raw"
            while time.monotonic() < deadline:
                done = sorted(p.name for p in raw.glob("req_*.json")) if raw.exists() else []
                if len(done) >= 2:
                    break
                time.sleep(0.05)
            else:
                pytest.fail("driver never completed two requests")
        finally:
            proc.kill()
            proc.wait()

        assert len(list((job_dir / "raw").glob("req_*.json"))) == 2

        resume_entries = [
            ScriptEntry(match=None, response=json.dumps([f"resumed {k}"]), times=1)
            for k in range(3)
        ]
        result = run_job(plan, make_gateway(resume_entries, parallelism=1), job_dir)
        assert result.failures == ()
        status = job_status(job_dir)
        assert status["state"] == "done"
        assert status["requests_done"] == status["requests_total"] == 5

        contents = [m.content for m in read_jsonl(job_dir / "produced.jsonl")]
        assert contents.count("early 0") == 1
        assert contents.count("early2 0") == 1
        assert len([c for c in contents if c.startswith("resumed")]) == 3
        ok("crash after 2/5 requests, resume completes 5/5 without duplicates")


def run_full_pipeline(workdir: Path) -> bytes:
    """indicators -> generation of 300 -> dedup -> export, fully mocked."""
    candidate_provider_a = MockProvider(
        [ScriptEntry(match=None, response="- withdrawal issues\n- dormant address activation", times=None)]
    )
    candidate_provider_b = MockProvider(
        [ScriptEntry(match=None, response="- withdrawal issues\n- oracle feed outage", times=None)]
    )
    texts = [
        [f"request {r} message {i} topic {(r * 100 + i) % 13}" for i in range(100)]
        for r in range(3)
    ]
    gen_provider = MockProvider([array_entry(texts[r], match=r) for r in range(3)])
    gateway = Gateway(
        {
            "cand-a": candidate_provider_a,
            "cand-b": candidate_provider_b,
            "summ": DedupingSummarizerProvider(),
            "gen": gen_provider,
        },
        parallelism=1,
        sleeper=lambda s: None,
        rng_seed=0,
    )

    from synthweave.indicators import generate_candidates

    params = GenerationParams(
        topic="cyberattack", industry="blockchain", target_size=300, rng_seed=1234
    )
    gen = generate_candidates(params, None, ["cand-a", "cand-b"], gateway)
    indicators = summarize_indicators(
        gen.candidates, gateway, "summ", clock=lambda: __import__("datetime").datetime(2025, 1, 1)
    )

    tmpl = default_template(topic="cyberattack", industry="blockchain")
    seeds = make_messages([f"seed note {w} {i}" for i, w in enumerate("abcdefghijklmnopqrst")])
    plan = plan_job(params, seeds, tmpl, indicators, model="gen", job_id="deterministic")
    result = run_job(plan, gateway, workdir / "job")

    backend = HashedNgramBackend(dimension=64)
    store = EmbeddingStore(":memory:")
    dataset, report = dedup_pipeline(
        list(result.produced), "fixed-session", DedupConfig(threshold=0.9), backend, store
    )
    store.close()
    export = workdir / "export.jsonl"
    write_jsonl(list(dataset), export)
    return export.read_bytes()


class TestEndToEndDeterminism:
    def test_two_runs_are_byte_identical(self, tmp_path):
        started = time.monotonic()
        first = run_full_pipeline(tmp_path / "one")
        second = run_full_pipeline(tmp_path / "two")
        elapsed = time.monotonic() - started
        assert first == second
        assert len(first) > 0
        assert elapsed < 60.0, f"pipeline pair took {elapsed:.1f}s"
        ok(f"end-to-end determinism (byte-identical exports in {elapsed:.1f}s)")
