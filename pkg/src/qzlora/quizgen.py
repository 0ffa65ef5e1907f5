"""Contrastive multiple-choice quiz generation and validation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from hashlib import sha256
from pathlib import Path
from typing import Sequence

from .errors import InvalidQuiz, UnknownTopic, ValidationExhausted
from .providers import TextCompletionProvider, TextRequest
from .storage import atomic_write_bytes
from .topics import Topic

FOCUS_ATTRIBUTES = ("texture", "material", "size", "shape", "color", "pattern", "context", "other")
MIN_OPTIONS = 2
MAX_OPTIONS = 6
DEFAULT_QUESTION_COUNT = 10
MAX_QUESTION_COUNT = 30
DEFAULT_OPTION_COUNT = 4
REGENERATION_ROUNDS = 3

def load_quiz_templates(path: Path | None = None) -> tuple[str, str]:
    """(system, user) templates from a TOML file, defaulting to the shipped one."""
    try:
        import tomllib
    except ModuleNotFoundError:  # pragma: no cover - version-dependent import
        import tomli as tomllib
    if path is None:
        from importlib import resources

        raw = resources.files("qzlora").joinpath("templates/quiz_prompt.toml").read_bytes()
    else:
        raw = Path(path).read_bytes()
    data = tomllib.loads(raw.decode("utf-8"))
    return data["system"], data["user"]


DEFAULT_SYSTEM_TEMPLATE, DEFAULT_USER_TEMPLATE = load_quiz_templates()


@dataclass(frozen=True)
class Question:
    stem: str
    options: tuple[str, ...]
    correct_index: int
    focus_attribute: str = "other"

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))


@dataclass(frozen=True)
class Quiz:
    topic_id: str
    questions: tuple[Question, ...]
    generator_model_id: str
    distractors_used: tuple[str, ...] = field(default_factory=tuple)
    created_at: str = ""

    def __post_init__(self):
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "distractors_used", tuple(self.distractors_used))

    @property
    def quiz_id(self) -> str:
        return sha256(canonical_serialize(self)).hexdigest()


@dataclass(frozen=True)
class Violation:
    rule: str
    detail: str
    question_index: int | None = None


def _norm(text: str) -> str:
    return " ".join((text or "").split())


def question_violations(q: Question, index: int | None = None) -> list[Violation]:
    problems = []
    if not _norm(q.stem):
        problems.append(Violation("EmptyStem", "question stem is empty", index))
    if not (MIN_OPTIONS <= len(q.options) <= MAX_OPTIONS):
        problems.append(Violation("OptionCount", f"{len(q.options)} options outside {MIN_OPTIONS}..{MAX_OPTIONS}", index))
    if any(not _norm(opt) for opt in q.options):
        problems.append(Violation("EmptyOption", "an option is empty", index))
    normalized = [_norm(opt).casefold() for opt in q.options]
    if len(set(normalized)) != len(normalized):
        problems.append(Violation("DuplicateOptions", "options are not pairwise distinct", index))
    if not (0 <= q.correct_index < len(q.options)):
        problems.append(Violation("OutOfRangeCorrectIndex", f"correct_index {q.correct_index} out of range", index))
    if q.focus_attribute not in FOCUS_ATTRIBUTES:
        problems.append(Violation("UnknownAttribute", f"{q.focus_attribute!r} not in {FOCUS_ATTRIBUTES}", index))
    return problems


def validate_quiz(quiz: Quiz) -> list[Violation]:
    """Empty list iff every quiz and question invariant holds."""
    problems = []
    if not quiz.questions:
        problems.append(Violation("NoQuestions", "quiz has no questions"))
    for i, question in enumerate(quiz.questions):
        problems.extend(question_violations(question, i))
    return problems


def canonical_serialize(quiz: Quiz) -> bytes:
    """Deterministic byte form: fixed field order, normalized whitespace,
    newline-terminated. The SHA-256 of these bytes is the quiz_id."""
    import json

    if not quiz.questions:
        raise InvalidQuiz("cannot serialize a quiz with no questions")
    payload = {
        "format": "qzlora-quiz-v1",
        "topic_id": _norm(quiz.topic_id),
        "generator_model_id": _norm(quiz.generator_model_id),
        "distractors_used": [_norm(d) for d in quiz.distractors_used],
        "created_at": _norm(quiz.created_at),
        "questions": [
            {
                "stem": _norm(q.stem),
                "options": [_norm(o) for o in q.options],
                "correct_index": q.correct_index,
                "focus_attribute": q.focus_attribute,
            }
            for q in quiz.questions
        ],
    }
    return (json.dumps(payload, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def quiz_from_canonical(data: bytes) -> Quiz:
    import json

    payload = json.loads(data.decode("utf-8"))
    return Quiz(
        topic_id=payload["topic_id"],
        questions=tuple(
            Question(
                stem=q["stem"],
                options=tuple(q["options"]),
                correct_index=q["correct_index"],
                focus_attribute=q["focus_attribute"],
            )
            for q in payload["questions"]
        ),
        generator_model_id=payload["generator_model_id"],
        distractors_used=tuple(payload["distractors_used"]),
        created_at=payload["created_at"],
    )


_OPTION_LINE = re.compile(r"^\s*[\(\[]?([A-Fa-f])[\)\].:,]\s*(.+?)\s*$")
_ANSWER_LINE = re.compile(r"^\s*answer\b[\s:]*[\(\[]?([A-Fa-f])\b", re.IGNORECASE)
_ATTRIBUTE_LINE = re.compile(r"^\s*attribute\b[\s:]*([A-Za-z]+)", re.IGNORECASE)
_STEM_PREFIX = re.compile(r"^\s*(?:q|question)\s*\d*\s*[:.)]\s*", re.IGNORECASE)


def parse_question_blocks(text: str) -> list[Question]:
    """Parse the provider's block payload tolerantly; malformed blocks are
    dropped (structural validation happens separately)."""
    questions = []
    for block in re.split(r"\n\s*\n", text or ""):
        lines = [line for line in block.splitlines() if line.strip()]
        if not lines:
            continue
        stem_parts: list[str] = []
        options: list[tuple[str, str]] = []
        answer: str | None = None
        attribute = "other"
        for line in lines:
            answer_m = _ANSWER_LINE.match(line)
            if answer_m:
                answer = answer_m.group(1).upper()
                continue
            attr_m = _ATTRIBUTE_LINE.match(line)
            if attr_m:
                candidate = attr_m.group(1).lower()
                attribute = candidate if candidate in FOCUS_ATTRIBUTES else "other"
                continue
            option_m = _OPTION_LINE.match(line)
            if option_m:
                options.append((option_m.group(1).upper(), option_m.group(2)))
                continue
            stem_parts.append(_STEM_PREFIX.sub("", line).strip())
        if not stem_parts or not options or answer is None:
            continue
        letters = [letter for letter, _ in options]
        if answer not in letters:
            continue
        questions.append(Question(
            stem=" ".join(part for part in stem_parts if part),
            options=tuple(text for _, text in options),
            correct_index=letters.index(answer),
            focus_attribute=attribute,
        ))
    return questions


def build_generation_prompt(
    topic: Topic,
    distractor_summaries: Sequence[tuple[str, str]],
    question_count: int,
    option_count: int = DEFAULT_OPTION_COUNT,
    *,
    system_template: str = DEFAULT_SYSTEM_TEMPLATE,
    user_template: str = DEFAULT_USER_TEMPLATE,
) -> tuple[str, str]:
    if distractor_summaries:
        distractor_text = "\n".join(f"- {tid}: {summary}" for tid, summary in distractor_summaries)
    else:
        distractor_text = "(none)"
    user_text = user_template.format(
        topic_summary=topic.summary_sentence,
        distractor_summaries=distractor_text,
        question_count=question_count,
        option_count=option_count,
    )
    return system_template, user_text


def generate_quiz(
    topic: Topic,
    distractor_summaries: Sequence[tuple[str, str]],
    question_count: int,
    provider: TextCompletionProvider,
    *,
    model_id: str,
    option_count: int = DEFAULT_OPTION_COUNT,
    max_rounds: int = REGENERATION_ROUNDS,
    temperature: float = 0.0,
    max_tokens: int = 4096,
    system_template: str = DEFAULT_SYSTEM_TEMPLATE,
    user_template: str = DEFAULT_USER_TEMPLATE,
    store_root: Path | None = None,
    created_at: str | None = None,
) -> Quiz:
    """Generate exactly question_count validated questions.

    Invalid questions trigger partial regeneration: only the shortfall is
    re-requested, up to max_rounds total provider rounds.
    """
    if not (1 <= question_count <= MAX_QUESTION_COUNT):
        raise ValueError(f"question_count must be in 1..{MAX_QUESTION_COUNT}")
    valid: list[Question] = []
    for round_index in range(max_rounds):
        need = question_count - len(valid)
        if need <= 0:
            break
        system_text, user_text = build_generation_prompt(
            topic, distractor_summaries, need, option_count,
            system_template=system_template, user_template=user_template,
        )
        if round_index:
            # Distinct request per round so deterministic providers do not
            # replay the payload that just failed validation.
            user_text += f"\n\nRegeneration round {round_index}: supply fresh questions."
        response = provider.complete(TextRequest(
            model_id=model_id,
            system_text=system_text,
            user_text=user_text,
            max_tokens=max_tokens,
            temperature=temperature,
        ))
        for question in parse_question_blocks(response.text):
            if len(valid) >= question_count:
                break
            if not question_violations(question):
                valid.append(question)
    if len(valid) < question_count:
        raise ValidationExhausted(
            f"{topic.topic_id}: {len(valid)}/{question_count} valid questions after {max_rounds} rounds"
        )
    quiz = Quiz(
        topic_id=topic.topic_id,
        questions=tuple(valid[:question_count]),
        generator_model_id=model_id,
        distractors_used=tuple(tid for tid, _ in distractor_summaries),
        created_at=created_at or _now_iso(),
    )
    problems = validate_quiz(quiz)
    if problems:
        raise InvalidQuiz("; ".join(f"{v.rule}[{v.question_index}]" for v in problems))
    if store_root is not None:
        save_quiz(store_root, quiz)
    return quiz


def _now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def quiz_path(store_root: Path, topic_id: str, quiz_id: str) -> Path:
    return Path(store_root) / "quizzes" / topic_id / f"{quiz_id}.json"


def save_quiz(store_root: Path, quiz: Quiz) -> Path:
    path = quiz_path(store_root, quiz.topic_id, quiz.quiz_id)
    atomic_write_bytes(path, canonical_serialize(quiz))
    return path


def load_quiz(store_root: Path, topic_id: str, quiz_id: str | None = None) -> Quiz:
    """Load a stored quiz; with no quiz_id, the lexicographically first file
    (topics normally carry exactly one quiz)."""
    topic_dir = Path(store_root) / "quizzes" / topic_id
    if quiz_id is not None:
        path = quiz_path(store_root, topic_id, quiz_id)
        if not path.exists():
            raise UnknownTopic(f"no quiz {quiz_id} for {topic_id}")
        return quiz_from_canonical(path.read_bytes())
    candidates = sorted(topic_dir.glob("*.json")) if topic_dir.is_dir() else []
    if not candidates:
        raise UnknownTopic(f"no quiz stored for {topic_id}")
    return quiz_from_canonical(candidates[0].read_bytes())
