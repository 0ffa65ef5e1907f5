from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CorrectLetterVision, FixedTextVision, make_png, make_quiz
from qzlora.errors import ProviderFailure, UndecodableImage
from qzlora.providers import VisionResponse
from qzlora.scoring import (
    ScoreStore,
    ScoreSubject,
    parse_answer,
    score_batch,
    score_image,
)
from qzlora.storage import sha256_hex

CORPUS_PATH = Path(__file__).parent / "data" / "answer_parse_corpus.jsonl"


class TestParseAnswer:
    def test_answer_prefix(self):
        assert parse_answer("Answer: B.", 4) == 1

    def test_parenthesized_lowercase(self):
        assert parse_answer("The best choice is (c) because...", 4) == 2

    def test_out_of_range_letter(self):
        assert parse_answer("E", 4) is None

    def test_skips_out_of_range_to_first_in_range(self):
        assert parse_answer("E, but if forced, B", 4) == 1

    def test_option_count_validated(self):
        with pytest.raises(ValueError):
            parse_answer("A", 7)
        with pytest.raises(ValueError):
            parse_answer("A", 1)

    def test_corpus_agreement_is_total(self):
        lines = CORPUS_PATH.read_text(encoding="utf-8").splitlines()
        assert len(lines) >= 50
        for line in lines:
            expected, option_count, raw = json.loads(line)
            assert parse_answer(raw, option_count) == expected, f"corpus line: {line}"

    @settings(max_examples=500, deadline=None)
    @given(st.text(max_size=200), st.integers(2, 6))
    def test_total_and_in_range(self, text, option_count):
        result = parse_answer(text, option_count)
        assert result is None or 0 <= result < option_count


class TestScoreImage:
    def test_all_correct(self):
        quiz = make_quiz()
        provider = CorrectLetterVision()
        provider.register_quiz(quiz)
        record = score_image(make_png(0.5), quiz, provider, subject_id="img-a", model_id="vlm")
        assert record.accuracy == 1.0
        assert len(record.verdicts) == len(quiz.questions)
        assert all(v.correct for v in record.verdicts)

    def test_out_of_range_reply_scores_zero(self):
        quiz = make_quiz()
        record = score_image(make_png(0.5), quiz, FixedTextVision("E"),
                             subject_id="img-a", model_id="vlm")
        assert record.accuracy == 0.0
        assert all(v.chosen_index is None and not v.correct for v in record.verdicts)

    def test_hash_keyed_mock_splits_subjects(self):
        quiz = make_quiz()

        class HashKeyedVision:
            """Correct iff the image digest's first byte is even."""

            def __init__(self):
                self.answers = {}

            def register_quiz(self, q):
                from qzlora.scoring import format_question_prompt

                for question in q.questions:
                    self.answers[format_question_prompt(question)] = question

            def answer(self, request):
                question = self.answers[request.user_text]
                even = int(sha256_hex(request.image_bytes)[:2], 16) % 2 == 0
                if even:
                    return VisionResponse(text=chr(ord("A") + question.correct_index))
                return VisionResponse(
                    text=chr(ord("A") + (question.correct_index + 1) % len(question.options)))

        provider = HashKeyedVision()
        provider.register_quiz(quiz)
        images = [make_png(0.3 + i / 100) for i in range(16)]
        even_img = next(i for i in images if int(sha256_hex(i)[:2], 16) % 2 == 0)
        odd_img = next(i for i in images if int(sha256_hex(i)[:2], 16) % 2 == 1)
        rec_even = score_image(even_img, quiz, provider, subject_id="even", model_id="vlm")
        rec_odd = score_image(odd_img, quiz, provider, subject_id="odd", model_id="vlm")
        assert rec_even.accuracy == 1.0
        assert rec_odd.accuracy == 0.0

    def test_undecodable_image(self):
        with pytest.raises(UndecodableImage):
            score_image(b"junk", make_quiz(), FixedTextVision("A"),
                        subject_id="x", model_id="vlm")

    def test_accuracy_times_count_is_integer(self):
        quiz = make_quiz(question_count=7)
        provider = CorrectLetterVision()
        provider.register_quiz(quiz)
        record = score_image(make_png(0.4), quiz, provider, subject_id="a", model_id="vlm")
        product = record.accuracy * len(record.verdicts)
        assert abs(product - round(product)) < 1e-9

    def test_provider_failure_aborts_without_caching(self, tmp_path):
        quiz = make_quiz()
        store = ScoreStore(tmp_path)

        class FailingVision:
            def answer(self, request):
                raise OSError("down")

        with pytest.raises(ProviderFailure):
            score_image(make_png(0.5), quiz, FailingVision(), subject_id="a",
                        model_id="vlm", store=store, sleep=lambda s: None)
        assert store.get(sha256_hex(make_png(0.5)), quiz.quiz_id, "vlm") is None


class TestCacheAndBatch:
    def test_cache_hit_returns_identical_bytes_and_skips_calls(self, tmp_path):
        quiz = make_quiz()
        store = ScoreStore(tmp_path)
        provider = CorrectLetterVision()
        provider.register_quiz(quiz)
        image = make_png(0.6)
        first = score_image(image, quiz, provider, subject_id="a", model_id="vlm",
                            store=store, scored_at="1970-01-01T00:00:00Z")
        calls = provider.call_count
        path = store.record_path(first.subject_hash, quiz.quiz_id, "vlm")
        bytes_before = path.read_bytes()
        second = score_image(image, quiz, provider, subject_id="a", model_id="vlm", store=store)
        assert provider.call_count == calls
        assert second == first
        assert path.read_bytes() == bytes_before

    def test_batch_all_cached_zero_calls(self, tmp_path):
        quiz = make_quiz()
        store = ScoreStore(tmp_path)
        provider = CorrectLetterVision()
        provider.register_quiz(quiz)
        subjects = [ScoreSubject(f"s{i}", make_png(0.2 + i / 20)) for i in range(10)]
        score_batch(subjects, quiz, provider, model_id="vlm", store=store,
                    scored_at="1970-01-01T00:00:00Z")
        calls = provider.call_count
        items = score_batch(subjects, quiz, provider, model_id="vlm", store=store)
        assert provider.call_count == calls
        assert [i.subject_id for i in items] == [s.subject_id for s in subjects]

    def test_parallelism_does_not_change_results(self):
        quiz = make_quiz()
        provider = CorrectLetterVision()
        provider.register_quiz(quiz)
        subjects = [ScoreSubject(f"s{i}", make_png(0.2 + i / 30)) for i in range(9)]
        seq = score_batch(subjects, quiz, provider, 1, model_id="vlm",
                          scored_at="1970-01-01T00:00:00Z")
        par = score_batch(subjects, quiz, provider, 8, model_id="vlm",
                          scored_at="1970-01-01T00:00:00Z")
        assert seq == par

    def test_partial_failure_keeps_order_and_successes(self):
        quiz = make_quiz()
        provider = CorrectLetterVision()
        provider.register_quiz(quiz)
        subjects = [
            ScoreSubject("good-1", make_png(0.3)),
            ScoreSubject("bad", b"not an image"),
            ScoreSubject("good-2", make_png(0.7)),
        ]
        items = score_batch(subjects, quiz, provider, model_id="vlm")
        assert [i.subject_id for i in items] == ["good-1", "bad", "good-2"]
        assert items[0].record is not None and items[2].record is not None
        assert items[1].record is None and "UndecodableImage" in items[1].error

    def test_model_id_isolates_cache(self, tmp_path):
        quiz = make_quiz()
        store = ScoreStore(tmp_path)
        provider = CorrectLetterVision()
        provider.register_quiz(quiz)
        image = make_png(0.5)
        score_image(image, quiz, provider, subject_id="a", model_id="vlm-1", store=store)
        assert store.get(sha256_hex(image), quiz.quiz_id, "vlm-2") is None
        calls = provider.call_count
        score_image(image, quiz, provider, subject_id="a", model_id="vlm-2", store=store)
        assert provider.call_count == calls + len(quiz.questions)
