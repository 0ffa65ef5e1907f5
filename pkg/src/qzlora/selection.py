"""Ranking of scored candidates and reproducible selection sets.

Conditions are labeled `<kind>[-k]/<style>`, e.g. `qzlora-top-15/realistic`,
`lora-random-15/realistic`, `no-lora/illustration`, `real-top-5/realistic`;
labels round-trip through parse_condition_label.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import EmptyCorpus, EmptyRanking, MixedQuiz
from .ingest import CandidateImage
from .rng import SplitMix64, sample_without_replacement
from .scoring import ScoreRecord
from .storage import read_json, write_json

KIND_NO_LORA = "no-lora"
KIND_LORA_RANDOM = "lora-random"
KIND_QZLORA_TOP = "qzlora-top"
KIND_REAL_RANDOM = "real-random"
KIND_REAL_TOP = "real-top"

CONDITION_KINDS = (KIND_NO_LORA, KIND_LORA_RANDOM, KIND_QZLORA_TOP, KIND_REAL_RANDOM, KIND_REAL_TOP)
STYLES = ("realistic", "illustration")

# Kinds that fine-tune a model / that rank by quiz score / that sample randomly.
TRAINED_KINDS = (KIND_LORA_RANDOM, KIND_QZLORA_TOP)
TOP_K_KINDS = (KIND_QZLORA_TOP, KIND_REAL_TOP)
RANDOM_KINDS = (KIND_LORA_RANDOM, KIND_REAL_RANDOM)
GENERATED_KINDS = (KIND_NO_LORA, KIND_LORA_RANDOM, KIND_QZLORA_TOP)
REAL_KINDS = (KIND_REAL_RANDOM, KIND_REAL_TOP)

_LABEL_RE = re.compile(r"^([a-z-]+?)(?:-(\d+))?/(realistic|illustration)$")


@dataclass(frozen=True)
class Condition:
    kind: str
    k: int
    style: str = "realistic"

    def __post_init__(self):
        if self.kind not in CONDITION_KINDS:
            raise ValueError(f"unknown condition kind {self.kind!r}")
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}")
        if (self.kind == KIND_NO_LORA) != (self.k == 0):
            raise ValueError("k must be 0 exactly for no-lora conditions")
        if self.k < 0:
            raise ValueError("k must be nonnegative")

    @property
    def label(self) -> str:
        if self.kind == KIND_NO_LORA:
            return f"{self.kind}/{self.style}"
        return f"{self.kind}-{self.k}/{self.style}"

    @property
    def trains(self) -> bool:
        return self.kind in TRAINED_KINDS

    @property
    def generates(self) -> bool:
        return self.kind in GENERATED_KINDS

    @property
    def selects(self) -> bool:
        return self.kind != KIND_NO_LORA


def parse_condition_label(label: str) -> Condition:
    match = _LABEL_RE.match(label)
    if not match:
        raise ValueError(f"unparseable condition label {label!r}")
    kind, k_text, style = match.groups()
    if kind not in CONDITION_KINDS:
        raise ValueError(f"unknown condition kind {kind!r} in {label!r}")
    return Condition(kind=kind, k=int(k_text) if k_text else 0, style=style)


@dataclass(frozen=True)
class SelectionSet:
    topic_id: str
    condition: Condition
    image_ids: tuple[str, ...]
    seed: int | None = None  # random conditions only
    source_quiz_id: str | None = None  # top-k conditions only
    short: bool = False  # fewer candidates than k were available

    def __post_init__(self):
        object.__setattr__(self, "image_ids", tuple(self.image_ids))


def rank(records: Sequence[ScoreRecord]) -> list[tuple[str, float]]:
    """Descending accuracy, ties broken by ascending subject_id. Pure."""
    if not records:
        return []
    quiz_ids = {r.quiz_id for r in records}
    model_ids = {r.vlm_model_id for r in records}
    if len(quiz_ids) > 1 or len(model_ids) > 1:
        raise MixedQuiz(f"records span quizzes {sorted(quiz_ids)} / models {sorted(model_ids)}")
    subjects = [r.subject_id for r in records]
    if len(set(subjects)) != len(subjects):
        raise MixedQuiz("duplicate subject_id in ranking input")
    ordered = sorted(records, key=lambda r: (-r.accuracy, r.subject_id))
    return [(r.subject_id, r.accuracy) for r in ordered]


def select_top_k(
    ranking: Sequence[tuple[str, float]],
    k: int,
    *,
    topic_id: str,
    condition: Condition,
    source_quiz_id: str,
) -> SelectionSet:
    """First min(k, n) ranked ids; short=True when the ranking ran out."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranking:
        raise EmptyRanking(topic_id)
    chosen = [subject_id for subject_id, _ in ranking[:k]]
    return SelectionSet(
        topic_id=topic_id,
        condition=condition,
        image_ids=tuple(chosen),
        source_quiz_id=source_quiz_id,
        short=len(chosen) < k,
    )


def select_random_k(
    corpus: Sequence[CandidateImage],
    k: int,
    seed: int,
    *,
    topic_id: str,
    condition: Condition,
) -> SelectionSet:
    """Uniform sample without replacement from non-corrupt candidates using
    the repo's SplitMix64 partial Fisher-Yates draw; deterministic per seed."""
    if k < 1:
        raise ValueError("k must be >= 1")
    candidates = [c for c in corpus if not c.corrupt]
    if not candidates:
        raise EmptyCorpus(topic_id)
    rng = SplitMix64(seed)
    indices = sample_without_replacement(len(candidates), min(k, len(candidates)), rng)
    return SelectionSet(
        topic_id=topic_id,
        condition=condition,
        image_ids=tuple(candidates[i].image_id for i in indices),
        seed=seed,
        short=len(indices) < k,
    )


def selection_path(store_root: Path, topic_id: str, condition: Condition) -> Path:
    return Path(store_root) / "selections" / topic_id / f"{condition.label}.json"


def save_selection(store_root: Path, selection: SelectionSet) -> Path:
    path = selection_path(store_root, selection.topic_id, selection.condition)
    write_json(path, {
        "topic_id": selection.topic_id,
        "condition": selection.condition.label,
        "image_ids": list(selection.image_ids),
        "seed": selection.seed,
        "source_quiz_id": selection.source_quiz_id,
        "short": selection.short,
    })
    return path


def load_selection(store_root: Path, topic_id: str, condition: Condition) -> SelectionSet:
    raw = read_json(selection_path(store_root, topic_id, condition))
    return SelectionSet(
        topic_id=raw["topic_id"],
        condition=parse_condition_label(raw["condition"]),
        image_ids=tuple(raw["image_ids"]),
        seed=raw.get("seed"),
        source_quiz_id=raw.get("source_quiz_id"),
        short=raw.get("short", False),
    )
