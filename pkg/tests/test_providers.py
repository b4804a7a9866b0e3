from __future__ import annotations

import json
import threading
import time

import pytest

from synthweave.providers import (
    BATCH_DONE,
    ChatRequest,
    ChatResponse,
    CostLedger,
    DedupingSummarizerProvider,
    MockProvider,
    ProviderError,
    RateLimitError,
    RefusalError,
    ResponseSchema,
    SchemaParseError,
    ScriptEntry,
    TokenUsage,
    UnknownHandleError,
    load_script,
    parse_structured,
    record_usage,
)

from .conftest import make_gateway


def req(prompt="hello there", model="mock", **kwargs):
    return ChatRequest(model=model, user_prompt=prompt, **kwargs)


class TestChatRequestValidation:
    def test_temperature_validated_before_any_call(self):
        with pytest.raises(ValueError):
            ChatRequest(model="mock", user_prompt="x", temperature=1.5)

    def test_empty_prompt_rejected(self):
        with pytest.raises(ValueError):
            ChatRequest(model="mock", user_prompt="")


class TestMockProvider:
    def test_scripted_response_and_usage(self):
        gw = make_gateway([ScriptEntry(match="hello", response="hi!", usage=TokenUsage(7, 11))])
        resp = gw.complete_chat(req())
        assert resp.text == "hi!"
        assert resp.usage == TokenUsage(7, 11)
        assert resp.finish_reason == "complete"

    def test_index_match(self):
        entries = [ScriptEntry(match=0, response="first"), ScriptEntry(match=1, response="second")]
        gw = make_gateway(entries)
        assert gw.complete_chat(req("a")).text == "first"
        assert gw.complete_chat(req("b")).text == "second"

    def test_no_matching_entry_is_an_error(self):
        gw = make_gateway([ScriptEntry(match="nope", response="x")])
        with pytest.raises(ProviderError):
            gw.complete_chat(req("other"))

    def test_script_file_roundtrip(self, tmp_path):
        path = tmp_path / "script.jsonl"
        path.write_text(
            json.dumps({"match": "q", "response": "a", "usage": {"input": 3, "output": 4}})
            + "\n"
            + json.dumps({"match": None, "response": "fallback"}),
            encoding="utf-8",
        )
        entries = load_script(path)
        provider = MockProvider(entries)
        assert provider.chat(req("a q here")).text == "a"
        assert provider.chat(req("zzz")).text == "fallback"


class TestRetries:
    def test_three_429s_then_success(self):
        entries = [
            ScriptEntry(match="flaky", error="rate_limit", times=3),
            ScriptEntry(match="flaky", response="recovered"),
        ]
        gw = make_gateway(entries)
        resp = gw.complete_chat(req("flaky request"))
        assert resp.text == "recovered"
        assert resp.retries == 3

    def test_retries_exhausted_raises(self):
        entries = [ScriptEntry(match="flaky", error="rate_limit", times=10)]
        gw = make_gateway(entries, retry_limit=3)
        with pytest.raises(RateLimitError):
            gw.complete_chat(req("flaky request"))

    def test_auth_errors_not_retried(self):
        entries = [
            ScriptEntry(match="x", error="auth", times=1),
            ScriptEntry(match="x", response="never"),
        ]
        gw = make_gateway(entries)
        with pytest.raises(ProviderError):
            gw.complete_chat(req("x"))


class TestRefusals:
    def test_refusal_is_a_finish_reason_not_an_error(self):
        gw = make_gateway([ScriptEntry(match=None, response="cannot help", refusal=True)])
        resp = gw.complete_chat(req())
        assert resp.finish_reason == "refused"

    def test_structured_refusal_raises(self):
        gw = make_gateway([ScriptEntry(match=None, response="no", refusal=True)])
        with pytest.raises(RefusalError):
            gw.complete_structured(req(response_schema=ResponseSchema(kind="string_array")))


class TestStructuredParsing:
    def test_array_of_objects(self):
        value = parse_structured('[{"message":"a"},{"message":"b"}]', ResponseSchema(kind="object_array"))
        assert value == [{"message": "a"}, {"message": "b"}]

    def test_string_array_accepts_wrapped_objects(self):
        value = parse_structured('[{"message":"a"},{"message":"b"}]', ResponseSchema(kind="string_array"))
        assert value == ["a", "b"]

    def test_score_map(self):
        value = parse_structured('{"1": 0.9, "2": 0.1}', ResponseSchema(kind="score_map"))
        assert value == {"1": 0.9, "2": 0.1}

    def test_truncated_json_keeps_raw_text(self):
        raw = '[{"message": "a"}, {"mess'
        with pytest.raises(SchemaParseError) as err:
            parse_structured(raw, ResponseSchema(kind="string_array"))
        assert err.value.raw_text == raw

    def test_code_fences_tolerated(self):
        value = parse_structured('```json\n["a", "b"]\n```', ResponseSchema(kind="string_array"))
        assert value == ["a", "b"]


class TestBatches:
    def test_submit_empty_rejected(self):
        gw = make_gateway([ScriptEntry(match=None, response="x")])
        with pytest.raises(ValueError):
            gw.submit_batch([])

    def test_results_in_original_index_order(self):
        entries = [ScriptEntry(match=f"prompt-{i}", response=f"answer-{i}") for i in range(5)]
        gw = make_gateway(entries, parallelism=4)
        handle = gw.submit_batch([req(f"prompt-{i}") for i in range(5)])
        assert handle.total == 5
        status = gw.wait_batch(handle, timeout=10)
        assert status.status == BATCH_DONE
        assert [r.index for r in status.results] == [0, 1, 2, 3, 4]
        assert [r.response.text for r in status.results] == [f"answer-{i}" for i in range(5)]

    def test_partial_failure_still_completes(self):
        entries = [
            ScriptEntry(match="bad", error="rate_limit", times=None),
            ScriptEntry(match=None, response="ok"),
        ]
        gw = make_gateway(entries, parallelism=2, retry_limit=1)
        handle = gw.submit_batch([req("good-1"), req("bad one"), req("good-2")])
        status = gw.wait_batch(handle, timeout=10)
        assert status.status == BATCH_DONE
        oks = [r for r in status.results if r.response is not None]
        errors = [r for r in status.results if r.error is not None]
        assert len(oks) == 2
        assert len(errors) == 1
        assert errors[0].index == 1
        assert errors[0].error_kind == "RateLimitError"

    def test_unknown_handle(self):
        gw = make_gateway([ScriptEntry(match=None, response="x")])
        with pytest.raises(UnknownHandleError):
            gw.poll_batch("nonsense")

    def test_done_poll_idempotent(self):
        gw = make_gateway([ScriptEntry(match=None, response="x", times=None)])
        handle = gw.submit_batch([req("a"), req("b")])
        done = gw.wait_batch(handle, timeout=10)
        again = gw.poll_batch(handle)
        assert done == again

    def test_progress_is_monotone_under_latency(self):
        entries = [
            ScriptEntry(match="slow", response="s", delay_s=0.15),
            ScriptEntry(match=None, response="f", times=None),
        ]
        provider = MockProvider(entries, sleeper=time.sleep)
        gw = make_gateway([], providers={"mock2": provider}, parallelism=1)
        handle = gw.submit_batch(
            [ChatRequest(model="mock2", user_prompt=p) for p in ("fast-a", "slow one", "fast-b")]
        )
        seen_states = []
        completed = []
        deadline = time.monotonic() + 10
        while True:
            status = gw.poll_batch(handle)
            seen_states.append(status.status)
            completed.append(status.completed)
            if status.status == BATCH_DONE or time.monotonic() > deadline:
                break
            time.sleep(0.02)
        assert completed == sorted(completed)
        assert seen_states[-1] == BATCH_DONE
        assert any(s in ("queued", "running", "partial") for s in seen_states[:-1])


class TestUsageLedger:
    def test_additive_totals(self):
        ledger = CostLedger()
        resp = ChatResponse(text="", usage=TokenUsage(500, 1500), model="m")
        ledger = record_usage(resp, ledger)
        ledger = record_usage(resp, ledger)
        totals = ledger.totals()
        assert (totals.input_tokens, totals.output_tokens) == (1000, 3000)

    def test_empty_ledger(self):
        totals = CostLedger().totals()
        assert (totals.input_tokens, totals.output_tokens) == (0, 0)

    def test_order_independent(self):
        a = ChatResponse(text="", usage=TokenUsage(10, 1), model="m1")
        b = ChatResponse(text="", usage=TokenUsage(20, 2), model="m2")
        one = record_usage(b, record_usage(a, CostLedger()))
        other = record_usage(a, record_usage(b, CostLedger()))
        assert one.totals() == other.totals()
        assert one.per_model == other.per_model

    def test_request_volume_lands_in_expected_token_band(self):
        # ~161 requests at realistic per-request usage stays inside the
        # 161 * [500, 800] input-token envelope
        ledger = CostLedger()
        for _ in range(161):
            ledger = ledger.add(ChatResponse(text="", usage=TokenUsage(620, 1800), model="m"))
        totals = ledger.totals()
        assert 80_500 <= totals.input_tokens <= 128_800

    def test_estimated_flag_tracked(self):
        resp = ChatResponse(text="x" * 400, usage=TokenUsage(10, 100), model="m", usage_estimated=True)
        ledger = record_usage(resp, CostLedger())
        assert "m" in ledger.estimated_models

    def test_ledger_dict_roundtrip(self):
        ledger = record_usage(
            ChatResponse(text="", usage=TokenUsage(5, 6), model="m"), CostLedger()
        )
        again = CostLedger.from_dict(ledger.to_dict())
        assert again.totals() == ledger.totals()


class TestDedupingSummarizer:
    def test_merges_exact_duplicates(self):
        provider = DedupingSummarizerProvider()
        prompt = (
            "summarize this\n\nIndicators to summarize:\n"
            "unusual spikes in transaction volume\nwithdrawal issues\n"
            "unusual spikes in transaction volume"
        )
        resp = provider.chat(ChatRequest(model="s", user_prompt=prompt))
        assert resp.text.count("unusual spikes in transaction volume") == 1
        assert "withdrawal issues" in resp.text


class TestConcurrencySafety:
    def test_parallel_batches_do_not_interfere(self):
        entries = [ScriptEntry(match=None, response="ok", times=None)]
        gw = make_gateway(entries, parallelism=4)
        handles = [gw.submit_batch([req(f"p{i}-{j}") for j in range(4)]) for i in range(3)]
        results = []

        def wait(h):
            results.append(gw.wait_batch(h, timeout=10))

        threads = [threading.Thread(target=wait, args=(h,)) for h in handles]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(s.status == BATCH_DONE and s.completed == 4 for s in results)
