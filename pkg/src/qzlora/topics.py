"""Topic registry and eligibility checks for corpus curation."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import DuplicateTopic, InvalidTopic, UnknownTopic
from .storage import read_json, write_json

CATEGORIES = ("Biology", "Architecture", "FoodAndDrink", "Art")

# Eligibility thresholds: a topic qualifies when it is not too popular and
# has enough public images to curate from.
MAX_MONTHLY_VIEWS = 6000
MIN_AVAILABLE_IMAGES = 30

_SLUG_RE = re.compile(r"[a-z0-9-]+\Z")


@dataclass(frozen=True)
class Topic:
    """A target concept to curate, fine-tune, and generate for."""

    topic_id: str
    wiki_url: str
    summary_sentence: str
    category: str
    monthly_views: int = 0
    distractor_ids: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "distractor_ids", tuple(self.distractor_ids))


def topic_violations(topic: Topic) -> list[str]:
    """Invariant violations, empty when the topic is registrable."""
    problems = []
    if not _SLUG_RE.match(topic.topic_id or ""):
        problems.append(f"topic_id {topic.topic_id!r} is not a [a-z0-9-]+ slug")
    if not (topic.summary_sentence or "").strip():
        problems.append("summary_sentence is empty")
    if topic.category not in CATEGORIES:
        problems.append(f"category {topic.category!r} not in {CATEGORIES}")
    if topic.monthly_views < 0:
        problems.append("monthly_views is negative")
    if topic.topic_id in topic.distractor_ids:
        problems.append("distractor_ids contains the topic itself")
    if len(topic.distractor_ids) > 5:
        problems.append("more than 5 distractor_ids")
    if len(set(topic.distractor_ids)) != len(topic.distractor_ids):
        problems.append("duplicate distractor_ids")
    return problems


def _to_record(topic: Topic) -> dict:
    record = asdict(topic)
    record["distractor_ids"] = list(topic.distractor_ids)
    return record


def _from_record(record: dict) -> Topic:
    return Topic(
        topic_id=record["topic_id"],
        wiki_url=record["wiki_url"],
        summary_sentence=record["summary_sentence"],
        category=record["category"],
        monthly_views=int(record.get("monthly_views", 0)),
        distractor_ids=tuple(record.get("distractor_ids", ())),
    )


def load_registry(registry_path: Path) -> dict[str, Topic]:
    registry_path = Path(registry_path)
    if not registry_path.exists():
        return {}
    raw = read_json(registry_path)
    return {tid: _from_record(rec) for tid, rec in raw.items()}


def _save_registry(registry_path: Path, topics: dict[str, Topic]) -> None:
    write_json(Path(registry_path), {tid: _to_record(t) for tid, t in sorted(topics.items())})


def register_topic(registry_path: Path, topic: Topic) -> Topic:
    """Persist a topic; idempotent for identical payloads.

    Raises InvalidTopic on invariant violations and DuplicateTopic when the
    same topic_id is already stored with a different payload.
    """
    problems = topic_violations(topic)
    if problems:
        raise InvalidTopic(f"{topic.topic_id}: " + "; ".join(problems))
    topics = load_registry(registry_path)
    existing = topics.get(topic.topic_id)
    if existing is not None:
        if existing == topic:
            return existing
        raise DuplicateTopic(f"{topic.topic_id} already registered with a different payload")
    topics[topic.topic_id] = topic
    _save_registry(registry_path, topics)
    return topic


def get_topic(registry_path: Path, topic_id: str) -> Topic:
    topics = load_registry(registry_path)
    if topic_id not in topics:
        raise UnknownTopic(topic_id)
    return topics[topic_id]


REASON_TOO_POPULAR = "TooPopular"
REASON_TOO_FEW_IMAGES = "TooFewImages"


@dataclass(frozen=True)
class EligibilityVerdict:
    eligible: bool
    reasons: tuple[str, ...] = ()


def check_eligibility(topic: Topic, available_image_count: int) -> EligibilityVerdict:
    """Pure verdict: eligible iff views < 6000 and at least 30 public images."""
    if available_image_count < 0:
        raise ValueError("available_image_count must be nonnegative")
    reasons = []
    if topic.monthly_views >= MAX_MONTHLY_VIEWS:
        reasons.append(REASON_TOO_POPULAR)
    if available_image_count < MIN_AVAILABLE_IMAGES:
        reasons.append(REASON_TOO_FEW_IMAGES)
    return EligibilityVerdict(eligible=not reasons, reasons=tuple(reasons))
