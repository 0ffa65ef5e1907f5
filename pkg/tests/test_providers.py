from __future__ import annotations

import json

import pytest

from conftest import make_png, make_quiz
from qzlora.errors import ProviderFailure
from qzlora.providers import (
    FixtureTextProvider,
    HttpTextProvider,
    HttpVisionProvider,
    LuminanceKeyedVision,
    SyntheticTextProvider,
    TextRequest,
    VisionRequest,
    mean_luminance,
    text_request_digest,
    vision_request_digest,
)
from qzlora.quizgen import parse_question_blocks
from qzlora.scoring import format_question_prompt, parse_answer


def _text_request(user_text="hello", **overrides) -> TextRequest:
    fields = dict(model_id="m", system_text="sys", user_text=user_text,
                  max_tokens=128, temperature=0.0)
    fields.update(overrides)
    return TextRequest(**fields)


class TestDigests:
    def test_text_digest_stable_and_sensitive(self):
        assert text_request_digest(_text_request()) == text_request_digest(_text_request())
        assert text_request_digest(_text_request()) != text_request_digest(_text_request("bye"))

    def test_vision_digest_covers_image_bytes(self):
        a = VisionRequest("m", "s", "u", make_png(0.2))
        b = VisionRequest("m", "s", "u", make_png(0.8))
        assert vision_request_digest(a) != vision_request_digest(b)


class TestFixtureTextProvider:
    def test_lookup_by_request_digest(self, tmp_path):
        provider = FixtureTextProvider(tmp_path)
        request = _text_request()
        provider.store_response(request, "canned reply")
        assert provider.complete(request).text == "canned reply"
        assert provider.call_log == [request]

    def test_missing_fixture_fails(self, tmp_path):
        with pytest.raises(ProviderFailure):
            FixtureTextProvider(tmp_path).complete(_text_request())


class TestSyntheticTextProvider:
    def test_payload_is_valid_and_deterministic(self):
        provider = SyntheticTextProvider()
        request = _text_request(
            "Write 6 multiple-choice questions about things. "
            "Each question must have exactly 4 answer options labeled A), B), ..."
        )
        first = provider.complete(request).text
        second = provider.complete(request).text
        assert first == second
        questions = parse_question_blocks(first)
        assert len(questions) == 6
        assert all(len(q.options) == 4 for q in questions)

    def test_different_requests_differ(self):
        provider = SyntheticTextProvider()
        a = provider.complete(_text_request("Write 3 multiple-choice questions A")).text
        b = provider.complete(_text_request("Write 3 multiple-choice questions B")).text
        assert a != b


class TestLuminanceKeyedVision:
    def _score(self, provider, quiz, image) -> float:
        correct = 0
        for question in quiz.questions:
            reply = provider.answer(VisionRequest("m", "s", format_question_prompt(question), image))
            chosen = parse_answer(reply.text, len(question.options))
            correct += chosen == question.correct_index
        return correct / len(quiz.questions)

    def test_bright_images_score_higher(self):
        quiz = make_quiz(question_count=24)
        provider = LuminanceKeyedVision()
        for question in quiz.questions:
            provider.register_question(format_question_prompt(question),
                                       question.correct_index, len(question.options))
        bright = self._score(provider, quiz, make_png(0.95))
        dark = self._score(provider, quiz, make_png(0.05))
        assert bright > dark

    def test_deterministic_per_request(self):
        quiz = make_quiz()
        provider = LuminanceKeyedVision()
        for question in quiz.questions:
            provider.register_question(format_question_prompt(question),
                                       question.correct_index, len(question.options))
        image = make_png(0.5)
        request = VisionRequest("m", "s", format_question_prompt(quiz.questions[0]), image)
        assert provider.answer(request).text == provider.answer(request).text

    def test_unregistered_question_is_refusal(self):
        provider = LuminanceKeyedVision()
        reply = provider.answer(VisionRequest("m", "s", "Question: ???", make_png(0.5)))
        assert parse_answer(reply.text, 4) is None

    def test_call_log_replays_identically(self):
        quiz = make_quiz()
        provider = LuminanceKeyedVision()
        for question in quiz.questions:
            provider.register_question(format_question_prompt(question),
                                       question.correct_index, len(question.options))
        images = {0: make_png(0.2), 1: make_png(0.8)}
        requests = [
            VisionRequest("m", "s", format_question_prompt(q), images[i % 2])
            for i, q in enumerate(quiz.questions)
        ]
        for request in requests:
            provider.answer(request)
        logged = list(provider.call_log)
        # Replay: answering the same requests reproduces the logged replies.
        replay = LuminanceKeyedVision()
        for question in quiz.questions:
            replay.register_question(format_question_prompt(question),
                                     question.correct_index, len(question.options))
        for request in requests:
            replay.answer(request)
        assert replay.call_log == logged


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "json": json, "headers": headers})
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item

        class Resp:
            def __init__(self, payload):
                self._payload = payload

            def raise_for_status(self):
                pass

            def json(self):
                return self._payload

        return Resp(item)


class TestHttpProviders:
    def test_text_provider_round_trip(self, monkeypatch):
        monkeypatch.setenv("TEXT_API_KEY", "secret-token")
        payload = {"choices": [{"message": {"content": "reply"}}], "usage": {"total_tokens": 5}}
        session = FakeSession([payload])
        provider = HttpTextProvider("https://api.example/v1/chat", session, sleep=lambda s: None)
        response = provider.complete(_text_request())
        assert response.text == "reply"
        assert response.token_usage == {"total_tokens": 5}
        sent = session.requests[0]
        assert sent["headers"]["Authorization"] == "Bearer secret-token"
        assert sent["json"]["messages"][0]["role"] == "system"

    def test_text_provider_retries_then_raises(self, monkeypatch):
        monkeypatch.setenv("TEXT_API_KEY", "k")
        session = FakeSession([OSError("x"), OSError("y"), OSError("z")])
        provider = HttpTextProvider("https://api", session, sleep=lambda s: None)
        with pytest.raises(ProviderFailure):
            provider.complete(_text_request())
        assert len(session.requests) == 3

    def test_missing_key_fails_fast(self, monkeypatch):
        monkeypatch.delenv("TEXT_API_KEY", raising=False)
        provider = HttpTextProvider("https://api", FakeSession([]), sleep=lambda s: None)
        with pytest.raises(ProviderFailure):
            provider.complete(_text_request())

    def test_vision_provider_encodes_image(self, monkeypatch):
        monkeypatch.setenv("VISION_API_KEY", "vk")
        payload = {"choices": [{"message": {"content": "Answer: A"}}]}
        session = FakeSession([payload])
        provider = HttpVisionProvider("https://api", session, sleep=lambda s: None)
        response = provider.answer(VisionRequest("m", "s", "q", make_png(0.4)))
        assert response.text == "Answer: A"
        content = session.requests[0]["json"]["messages"][1]["content"]
        assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")


class TestLuminance:
    def test_flat_image_luminance_exact(self):
        assert mean_luminance(make_png(0.0)) == 0.0
        assert abs(mean_luminance(make_png(0.5)) - round(0.5 * 255) / 255) < 1e-9
        assert mean_luminance(make_png(1.0)) == 1.0
