from __future__ import annotations

import json
from datetime import datetime, timezone

import pytest

from synthweave.indicators import (
    BackgroundContext,
    IndicatorCandidateSet,
    IndicatorSet,
    build_indicator_prompt,
    generate_candidates,
    load_indicator_set,
    parse_candidate_items,
    save_candidates,
    save_indicator_set,
    summarize_indicators,
)
from synthweave.models import GenerationParams, ValidationError
from synthweave.providers import ChatRequest, DedupingSummarizerProvider, ScriptEntry

from .conftest import make_gateway


@pytest.fixture
def params():
    return GenerationParams(topic="cyberattack", industry="blockchain", stakeholders="exchanges")


class TestIndicatorPrompt:
    def test_empty_context_omits_sections(self, params):
        prompt = build_indicator_prompt(params, BackgroundContext())
        assert "General Knowledge:" not in prompt
        assert "Historical Events:" not in prompt

    def test_events_rendered_verbatim(self, params):
        ctx = BackgroundContext(
            historical_events=(("2023-11-01", "BridgeCo exploit"), ("2024-02-14", "VaultX drain"))
        )
        prompt = build_indicator_prompt(params, ctx)
        assert "2023-11-01 - BridgeCo exploit" in prompt
        assert "2024-02-14 - VaultX drain" in prompt
        assert prompt.count("Historical Events:") == 1

    def test_knowledge_articles_each_once(self, params):
        ctx = BackgroundContext(general_knowledge=("article one text", "article two text"))
        prompt = build_indicator_prompt(params, ctx)
        assert prompt.count("article one text") == 1
        assert prompt.count("article two text") == 1

    def test_deterministic(self, params):
        ctx = BackgroundContext(general_knowledge=("a",), historical_events=(("d", "e"),))
        assert build_indicator_prompt(params, ctx) == build_indicator_prompt(params, ctx)

    def test_missing_topic_rejected(self):
        p = GenerationParams(topic="x", industry="y")
        object.__setattr__(p, "topic", "")
        with pytest.raises(ValidationError):
            build_indicator_prompt(p, None)


class TestCandidateParsing:
    def test_list_markers_stripped(self):
        raw = "- first signal\n* second signal\n3. third signal\n\nplain line"
        assert parse_candidate_items(raw) == (
            "first signal",
            "second signal",
            "third signal",
            "plain line",
        )

    def test_order_preserved(self):
        raw = "z last alphabetically\na first alphabetically"
        assert parse_candidate_items(raw) == ("z last alphabetically", "a first alphabetically")


class TestGenerateCandidates:
    def test_three_providers_three_sets(self, params):
        from synthweave.providers import MockProvider

        providers = {
            name: MockProvider([ScriptEntry(match=None, response=f"- signal from {name}")])
            for name in ("alpha", "beta", "gamma")
        }
        gw = make_gateway([ScriptEntry(match=None, response="- base signal")], providers=providers)
        result = generate_candidates(params, None, ["alpha", "beta", "gamma"], gw)
        assert len(result.candidates) == 3
        assert [c.provider for c in result.candidates] == ["alpha", "beta", "gamma"]
        assert result.candidates[0].items == ("signal from alpha",)
        assert result.failures == ()

    def test_refusing_provider_recorded_and_skipped(self, params):
        from synthweave.providers import MockProvider

        providers = {
            "good-1": MockProvider([ScriptEntry(match=None, response="- one")]),
            "refuser": MockProvider([ScriptEntry(match=None, response="cannot", refusal=True)]),
            "good-2": MockProvider([ScriptEntry(match=None, response="- two")]),
        }
        gw = make_gateway([], providers=providers)
        result = generate_candidates(params, None, ["good-1", "refuser", "good-2"], gw)
        assert len(result.candidates) == 2
        assert len(result.failures) == 1
        assert result.failures[0][0] == "refuser"
        assert "Refusal" in result.failures[0][1]

    def test_single_provider_degenerate_case(self, params):
        gw = make_gateway([ScriptEntry(match=None, response="- only signal")])
        result = generate_candidates(params, None, ["mock"], gw)
        assert len(result.candidates) == 1

    def test_all_failed_is_fatal(self, params):
        from synthweave.providers import MockProvider

        providers = {"bad": MockProvider([ScriptEntry(match=None, error="auth", times=None)])}
        gw = make_gateway([], providers=providers)
        with pytest.raises(RuntimeError):
            generate_candidates(params, None, ["bad"], gw)

    def test_raw_text_retained(self, params):
        gw = make_gateway([ScriptEntry(match=None, response="- a\nsome verbose text")])
        result = generate_candidates(params, None, ["mock"], gw)
        assert result.candidates[0].raw_text == "- a\nsome verbose text"


class TestSummarize:
    def test_summary_contains_all_items(self):
        candidates = [IndicatorCandidateSet(provider="p1", raw_text="", items=("A", "B"))]
        gw = make_gateway([], providers={"summarizer": DedupingSummarizerProvider()})
        result = summarize_indicators(candidates, gw, "summarizer")
        assert "A" in result.summary and "B" in result.summary
        assert result.sources == ("p1",)

    def test_exact_duplicates_merged_once(self):
        shared = "unusual spikes in transaction volume"
        candidates = [
            IndicatorCandidateSet(provider="p1", raw_text="", items=(shared, "x only")),
            IndicatorCandidateSet(provider="p2", raw_text="", items=(shared, "y only")),
        ]
        gw = make_gateway([], providers={"summarizer": DedupingSummarizerProvider()})
        result = summarize_indicators(candidates, gw, "summarizer")
        assert result.summary.count(shared) == 1
        assert result.sources == ("p1", "p2")

    def test_summary_is_single_paragraph(self):
        candidates = [IndicatorCandidateSet(provider="p", raw_text="", items=("a", "b", "c"))]
        gw = make_gateway([], providers={"summarizer": DedupingSummarizerProvider()})
        result = summarize_indicators(candidates, gw, "summarizer")
        assert "\n" not in result.summary
        assert "- " not in result.summary

    def test_low_temperature_default(self):
        captured = {}

        class Recorder:
            def chat(self, req: ChatRequest):
                captured["temperature"] = req.temperature
                from synthweave.providers import ChatResponse, TokenUsage

                return ChatResponse(text="summary", usage=TokenUsage(1, 1), model=req.model)

        gw = make_gateway([], providers={"rec": Recorder()})
        summarize_indicators(
            [IndicatorCandidateSet(provider="p", raw_text="", items=("a",))], gw, "rec"
        )
        assert captured["temperature"] == 0.2

    def test_empty_candidates_rejected(self):
        gw = make_gateway([])
        with pytest.raises(ValidationError):
            summarize_indicators([], gw, "mock")


class TestPersistence:
    def test_indicator_set_roundtrip(self, tmp_path):
        original = IndicatorSet(
            summary="dense summary",
            sources=("a", "b"),
            created_at=datetime(2025, 2, 3, tzinfo=timezone.utc),
        )
        path = tmp_path / "indicators.json"
        save_indicator_set(original, path)
        assert load_indicator_set(path) == original

    def test_candidates_saved_per_provider(self, tmp_path):
        candidates = (
            IndicatorCandidateSet(provider="prov/one", raw_text="raw", items=("i1",)),
            IndicatorCandidateSet(provider="prov-two", raw_text="raw2", items=("i2",)),
        )
        paths = save_candidates(candidates, tmp_path / "cands")
        assert len(paths) == 2
        loaded = json.loads(paths[0].read_text(encoding="utf-8"))
        assert loaded["provider"] == "prov/one"
        assert loaded["items"] == ["i1"]

    def test_invariants(self):
        with pytest.raises(ValidationError):
            IndicatorSet(summary="", sources=("a",))
        with pytest.raises(ValidationError):
            IndicatorSet(summary="x", sources=())
