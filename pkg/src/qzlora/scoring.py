"""Quiz administration against a vision provider: answer parsing, per-question
verdicts, accuracy records, and the append-only score cache."""

from __future__ import annotations

import io
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .errors import ProviderFailure, UndecodableImage
from .providers import VisionProvider, VisionRequest
from .quizgen import Question, Quiz
from .storage import read_json, sha256_hex, write_json

log = logging.getLogger(__name__)

RETRY_ATTEMPTS = 3
DEFAULT_PARALLELISM = 8

DEFAULT_SYSTEM_TEXT = (
    "You answer multiple-choice questions about the subject shown in the "
    "attached image. Reply with the letter of the single best option."
)

# A standalone option letter: not embedded in a longer word or number.
_LETTER_RE = re.compile(r"(?<![A-Za-z0-9])([A-Fa-f])(?![A-Za-z0-9])")


def parse_answer(raw_text: str, option_count: int) -> int | None:
    """First standalone option letter A-F that falls within the option range,
    case-insensitive; None when no in-range letter occurs.

    Tolerates forms like "Answer: B", "(b)", "**C**". Total and pure.
    """
    if not (2 <= option_count <= 6):
        raise ValueError("option_count must be in 2..6")
    for match in _LETTER_RE.finditer(raw_text or ""):
        index = ord(match.group(1).upper()) - ord("A")
        if index < option_count:
            return index
    return None


def format_question_prompt(question: Question) -> str:
    lines = [f"Question: {question.stem}", "Options:"]
    for i, option in enumerate(question.options):
        lines.append(f"{chr(ord('A') + i)}) {option}")
    lines.append("Answer with the letter of the single best option.")
    return "\n".join(lines)


@dataclass(frozen=True)
class Verdict:
    question_index: int
    chosen_index: int | None  # None means the reply was unparseable
    correct: bool


@dataclass(frozen=True)
class ScoreRecord:
    subject_id: str
    subject_hash: str
    quiz_id: str
    vlm_model_id: str
    verdicts: tuple[Verdict, ...]
    accuracy: float
    scored_at: str = ""

    def __post_init__(self):
        object.__setattr__(self, "verdicts", tuple(self.verdicts))


def _record_to_dict(record: ScoreRecord) -> dict:
    return {
        "subject_id": record.subject_id,
        "subject_hash": record.subject_hash,
        "quiz_id": record.quiz_id,
        "vlm_model_id": record.vlm_model_id,
        "verdicts": [
            {"question_index": v.question_index, "chosen_index": v.chosen_index, "correct": v.correct}
            for v in record.verdicts
        ],
        "accuracy": record.accuracy,
        "scored_at": record.scored_at,
    }


def _record_from_dict(raw: dict) -> ScoreRecord:
    return ScoreRecord(
        subject_id=raw["subject_id"],
        subject_hash=raw["subject_hash"],
        quiz_id=raw["quiz_id"],
        vlm_model_id=raw["vlm_model_id"],
        verdicts=tuple(
            Verdict(v["question_index"], v["chosen_index"], v["correct"]) for v in raw["verdicts"]
        ),
        accuracy=raw["accuracy"],
        scored_at=raw.get("scored_at", ""),
    )


def _model_slug(model_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", model_id)


class ScoreStore:
    """Append-only record store keyed by (subject_hash, quiz_id, model_id).

    One file per key; writes are idempotent (identical key implies identical
    value), so concurrent writers are benign.
    """

    def __init__(self, root: Path):
        self.root = Path(root) / "scores"

    def record_path(self, subject_hash: str, quiz_id: str, model_id: str) -> Path:
        return self.root / quiz_id / f"{subject_hash}.{_model_slug(model_id)}.json"

    def get(self, subject_hash: str, quiz_id: str, model_id: str) -> ScoreRecord | None:
        path = self.record_path(subject_hash, quiz_id, model_id)
        if not path.exists():
            return None
        return _record_from_dict(read_json(path))

    def put(self, record: ScoreRecord) -> None:
        path = self.record_path(record.subject_hash, record.quiz_id, record.vlm_model_id)
        write_json(path, _record_to_dict(record))

    def records_for_quiz(self, quiz_id: str, model_id: str) -> list[ScoreRecord]:
        quiz_dir = self.root / quiz_id
        suffix = f".{_model_slug(model_id)}.json"
        if not quiz_dir.is_dir():
            return []
        records = [
            _record_from_dict(read_json(path))
            for path in sorted(quiz_dir.iterdir())
            if path.name.endswith(suffix)
        ]
        return sorted(records, key=lambda r: r.subject_id)


def _decode_check(image_bytes: bytes) -> str:
    from PIL import Image

    try:
        with Image.open(io.BytesIO(image_bytes)) as img:
            fmt = (img.format or "PNG").lower()
    except Exception as exc:
        raise UndecodableImage(str(exc)) from exc
    return {"jpeg": "image/jpeg", "png": "image/png", "webp": "image/webp"}.get(fmt, "image/png")


def score_image(
    image_bytes: bytes,
    quiz: Quiz,
    provider: VisionProvider,
    *,
    subject_id: str,
    model_id: str,
    store: ScoreStore | None = None,
    system_text: str = DEFAULT_SYSTEM_TEXT,
    scored_at: str | None = None,
    sleep=time.sleep,
) -> ScoreRecord:
    """Administer the quiz, one provider call per question in stored order.

    A question that still fails after retries aborts the whole record;
    nothing is cached in that case. Unparseable replies count as incorrect.
    """
    media_type = _decode_check(image_bytes)
    subject_hash = sha256_hex(image_bytes)
    quiz_id = quiz.quiz_id
    if store is not None:
        cached = store.get(subject_hash, quiz_id, model_id)
        if cached is not None:
            return cached

    verdicts = []
    for index, question in enumerate(quiz.questions):
        request = VisionRequest(
            model_id=model_id,
            system_text=system_text,
            user_text=format_question_prompt(question),
            image_bytes=image_bytes,
            media_type=media_type,
        )
        response = _answer_with_retries(provider, request, subject_id, index, sleep)
        chosen = parse_answer(response.text, len(question.options))
        verdicts.append(Verdict(
            question_index=index,
            chosen_index=chosen,
            correct=chosen == question.correct_index,
        ))
    correct_count = sum(1 for v in verdicts if v.correct)
    record = ScoreRecord(
        subject_id=subject_id,
        subject_hash=subject_hash,
        quiz_id=quiz_id,
        vlm_model_id=model_id,
        verdicts=tuple(verdicts),
        accuracy=correct_count / len(verdicts),
        scored_at=scored_at if scored_at is not None else _now_iso(),
    )
    if store is not None:
        store.put(record)
    return record


def _answer_with_retries(provider, request, subject_id, question_index, sleep):
    delay = 1.0
    last: Exception | None = None
    for attempt in range(RETRY_ATTEMPTS):
        try:
            return provider.answer(request)
        except Exception as exc:
            last = exc
            log.warning("scoring %s q%d attempt %d failed: %s", subject_id, question_index, attempt + 1, exc)
            if attempt + 1 < RETRY_ATTEMPTS:
                sleep(delay)
                delay *= 2
    raise ProviderFailure(f"question {question_index} for {subject_id}: {last}") from last


@dataclass(frozen=True)
class ScoreSubject:
    subject_id: str
    image_bytes: bytes


@dataclass(frozen=True)
class BatchItem:
    subject_id: str
    record: ScoreRecord | None = None
    error: str | None = None


def score_batch(
    subjects: Sequence[ScoreSubject],
    quiz: Quiz,
    provider: VisionProvider,
    parallelism: int = DEFAULT_PARALLELISM,
    *,
    model_id: str,
    store: ScoreStore | None = None,
    system_text: str = DEFAULT_SYSTEM_TEXT,
    scored_at: str | None = None,
) -> list[BatchItem]:
    """Score many subjects; results come back in input order regardless of
    completion order, with per-subject failures embedded in the result."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    def _one(subject: ScoreSubject) -> BatchItem:
        try:
            record = score_image(
                subject.image_bytes, quiz, provider,
                subject_id=subject.subject_id, model_id=model_id,
                store=store, system_text=system_text, scored_at=scored_at,
            )
            return BatchItem(subject_id=subject.subject_id, record=record)
        except Exception as exc:
            return BatchItem(subject_id=subject.subject_id, error=f"{type(exc).__name__}: {exc}")

    if parallelism == 1 or len(subjects) <= 1:
        return [_one(s) for s in subjects]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_one, subjects))


def _now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
