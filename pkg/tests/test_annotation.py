from __future__ import annotations

import json
import logging
import random

import pytest

from synthweave.annotation import (
    AnnotationRecord,
    MissingAnnotationsError,
    ValidationInput,
    accuracy,
    annotate,
    annotations_to_csv,
    export_annotations_csv,
    import_reviewed_csv,
    predict_label,
)
from synthweave.models import ValidationError
from synthweave.providers import ScriptEntry

from .conftest import make_gateway, make_messages


def score_entry(messages, scores, match=None, times=None):
    payload = [
        {"message_id": m.id, "cyberattack_score": s} for m, s in zip(messages, scores)
    ]
    return ScriptEntry(match=match, response=json.dumps(payload), times=times)


class TestAnnotate:
    def test_three_messages_three_records(self, indicator_set):
        msgs = make_messages(["alpha", "beta", "gamma"])
        gw = make_gateway([score_entry(msgs, [0.9, 0.1, 0.5])])
        records = annotate(msgs, indicator_set.summary, gw, "mock")
        assert [r.score for r in records] == [0.9, 0.1, 0.5]
        assert [r.message_id for r in records] == [m.id for m in msgs]

    def test_missing_id_recovered_on_retry(self, indicator_set, caplog):
        msgs = make_messages(["alpha", "beta", "gamma"])
        entries = [
            score_entry(msgs[:2], [0.9, 0.1], times=1),  # drops gamma on first call
            score_entry(msgs[2:], [0.4]),
        ]
        gw = make_gateway(entries)
        with caplog.at_level(logging.INFO):
            records = annotate(msgs, indicator_set.summary, gw, "mock")
        assert len(records) == 3
        assert records[2].score == 0.4
        assert any("re-asking" in r.message for r in caplog.records)

    def test_persistently_missing_id_errors(self, indicator_set):
        msgs = make_messages(["alpha", "beta"])
        entries = [score_entry(msgs[:1], [0.9], times=None)]
        gw = make_gateway(entries)
        with pytest.raises(MissingAnnotationsError):
            annotate(msgs, indicator_set.summary, gw, "mock")

    def test_out_of_range_score_clamped_with_warning(self, indicator_set, caplog):
        msgs = make_messages(["alpha"])
        gw = make_gateway([score_entry(msgs, [1.3])])
        with caplog.at_level(logging.WARNING):
            records = annotate(msgs, indicator_set.summary, gw, "mock")
        assert records[0].score == 1.0
        assert any("clamped" in r.message for r in caplog.records)

    def test_string_scores_parsed(self, indicator_set):
        msgs = make_messages(["alpha"])
        payload = [{"message_id": msgs[0].id, "cyberattack_score": "0.75"}]
        gw = make_gateway([ScriptEntry(match=None, response=json.dumps(payload))])
        records = annotate(msgs, indicator_set.summary, gw, "mock")
        assert records[0].score == 0.75

    def test_unknown_ids_ignored(self, indicator_set):
        msgs = make_messages(["alpha"])
        payload = [
            {"message_id": msgs[0].id, "cyberattack_score": 0.5},
            {"message_id": "bogus", "cyberattack_score": 0.9},
        ]
        gw = make_gateway([ScriptEntry(match=None, response=json.dumps(payload))])
        records = annotate(msgs, indicator_set.summary, gw, "mock")
        assert len(records) == 1

    def test_empty_messages_rejected(self, indicator_set):
        gw = make_gateway([])
        with pytest.raises(ValidationError):
            annotate([], indicator_set.summary, gw, "mock")


class TestPredictLabel:
    def test_boundary_counts_as_positive(self):
        assert predict_label(0.5, 0.5) == 1

    def test_below_threshold(self):
        assert predict_label(0.49, 0.5) == 0

    def test_top_score(self):
        assert predict_label(1.0, 0.5) == 1

    def test_monotone_in_score(self):
        rng = random.Random(0)
        threshold = 0.5
        scores = sorted(rng.random() for _ in range(100))
        labels = [predict_label(s, threshold) for s in scores]
        assert labels == sorted(labels)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            predict_label(1.2, 0.5)


def make_validation(y, a, threshold=0.5):
    ids = [f"id-{i}" for i in range(len(y))]
    truths = tuple(zip(ids, y))
    annotations = tuple(
        AnnotationRecord(message_id=i, score=s, model="m") for i, s in zip(ids, a)
    )
    return ValidationInput(truths=truths, annotations=annotations, threshold=threshold)


class TestAccuracy:
    def test_all_correct_is_100(self):
        v = make_validation([1, 0, 1], [0.9, 0.1, 0.8])
        assert accuracy(v) == 100.0

    def test_hand_case_one_third(self):
        v = make_validation([1, 0, 1], [0.7, 0.6, 0.4])
        assert accuracy(v) == pytest.approx(33.3333, abs=0.01)

    def test_permutation_invariant(self):
        ids = ["a", "b", "c"]
        truths = (("a", 1), ("b", 0), ("c", 1))
        annotations = tuple(
            AnnotationRecord(message_id=i, score=s, model="m")
            for i, s in [("c", 0.4), ("a", 0.7), ("b", 0.6)]
        )
        shuffled = ValidationInput(truths=truths, annotations=annotations)
        assert accuracy(shuffled) == pytest.approx(33.3333, abs=0.01)

    def test_range_and_perfection_property(self):
        rng = random.Random(5)
        for _ in range(50):
            n = rng.randint(1, 30)
            y = [rng.randint(0, 1) for _ in range(n)]
            a = [rng.random() for _ in range(n)]
            v = make_validation(y, a)
            pct = accuracy(v)
            assert 0.0 <= pct <= 100.0
            predictions = [predict_label(s, 0.5) for s in a]
            if predictions == y:
                assert pct == 100.0
            else:
                assert pct < 100.0

    def test_unmatched_ids_error(self):
        truths = (("a", 1), ("b", 0))
        annotations = (AnnotationRecord(message_id="a", score=0.8, model="m"),)
        with pytest.raises(ValidationError):
            accuracy(ValidationInput(truths=truths, annotations=annotations))

    def test_duplicate_annotation_error(self):
        truths = (("a", 1),)
        annotations = (
            AnnotationRecord(message_id="a", score=0.8, model="m"),
            AnnotationRecord(message_id="a", score=0.2, model="m"),
        )
        with pytest.raises(ValidationError):
            accuracy(ValidationInput(truths=truths, annotations=annotations))

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            accuracy(ValidationInput(truths=(), annotations=()))

    def test_threshold_bounds(self):
        with pytest.raises(ValidationError):
            ValidationInput(truths=(("a", 1),), annotations=(), threshold=0.0)


class TestReviewRoundTrip:
    def test_export_import(self, tmp_path):
        msgs = make_messages(["first text", "second text"])
        records = [
            AnnotationRecord(message_id=msgs[0].id, score=0.9, model="m"),
            AnnotationRecord(message_id=msgs[1].id, score=0.2, model="m"),
        ]
        path = tmp_path / "review.csv"
        export_annotations_csv(msgs, records, path)
        text = path.read_text(encoding="utf-8")
        assert "message_id,content,cyberattack_score,human_label" in text

        # reviewer fills labels
        lines = text.splitlines()
        lines[1] += "1"
        lines[2] += "0"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        truths = import_reviewed_csv(path)
        assert truths == [(msgs[0].id, 1), (msgs[1].id, 0)]

    def test_unreviewed_rows_skipped(self, tmp_path):
        msgs = make_messages(["only one"])
        records = [AnnotationRecord(message_id=msgs[0].id, score=0.5, model="m")]
        path = tmp_path / "review.csv"
        export_annotations_csv(msgs, records, path)
        assert import_reviewed_csv(path) == []

    def test_csv_blank_human_label_column(self):
        msgs = make_messages(["text"])
        records = [AnnotationRecord(message_id=msgs[0].id, score=0.5, model="m")]
        rows = annotations_to_csv(msgs, records).splitlines()
        assert rows[1].endswith(",")
