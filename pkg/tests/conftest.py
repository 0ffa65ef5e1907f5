from __future__ import annotations

import io
import sys
from pathlib import Path

import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from qzlora.quizgen import Question, Quiz
from qzlora.topics import Topic


def make_png(brightness: float, side: int = 16, *, noise_seed: int | None = None) -> bytes:
    """Grayscale PNG with mean luminance ~= brightness."""
    level = max(0, min(255, round(brightness * 255)))
    if noise_seed is None:
        img = Image.new("L", (side, side), color=level)
    else:
        from qzlora.rng import SplitMix64

        rng = SplitMix64(noise_seed)
        pixels = bytes(max(0, min(255, level + rng.next_below(9) - 4)) for _ in range(side * side))
        img = Image.frombytes("L", (side, side), pixels)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def make_quiz(topic_id: str = "harlequin-finch", question_count: int = 4,
              option_count: int = 4, created_at: str = "1970-01-01T00:00:00Z") -> Quiz:
    questions = tuple(
        Question(
            stem=f"Which feature {i} stands out?",
            options=tuple(f"variant {chr(ord('A') + j)}{i}" for j in range(option_count)),
            correct_index=i % option_count,
            focus_attribute="color",
        )
        for i in range(question_count)
    )
    return Quiz(
        topic_id=topic_id,
        questions=questions,
        generator_model_id="fixture-model",
        distractors_used=("glass-spire-pavilion",),
        created_at=created_at,
    )


@pytest.fixture
def sample_topic() -> Topic:
    return Topic(
        topic_id="harlequin-finch",
        wiki_url="https://example.org/wiki/Harlequin_finch",
        summary_sentence="The harlequin finch, a small songbird with patchwork feathers",
        category="Biology",
        monthly_views=1200,
        distractor_ids=("glass-spire-pavilion",),
    )


class CorrectLetterVision:
    """Answers every question with its correct letter (requires registration)."""

    def __init__(self):
        self._answers: dict[str, str] = {}
        self.call_count = 0

    def register_quiz(self, quiz: Quiz) -> None:
        from qzlora.scoring import format_question_prompt

        for question in quiz.questions:
            self._answers[format_question_prompt(question)] = chr(ord("A") + question.correct_index)

    def answer(self, request):
        from qzlora.providers import VisionResponse

        self.call_count += 1
        return VisionResponse(text=f"Answer: {self._answers[request.user_text]}")


class FixedTextVision:
    """Always replies with the same text."""

    def __init__(self, text: str):
        self.text = text
        self.call_count = 0

    def answer(self, request):
        from qzlora.providers import VisionResponse

        self.call_count += 1
        return VisionResponse(text=self.text)
