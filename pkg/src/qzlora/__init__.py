"""qzlora: quiz-scored image curation, LoRA training orchestration, and
objective evaluation of generated images."""

__version__ = "0.1.0"

from .ingest import CandidateImage
from .quizgen import Question, Quiz
from .scoring import ScoreRecord
from .selection import Condition, SelectionSet
from .topics import EligibilityVerdict, Topic
from .training import TrainingManifest

__all__ = [
    "CandidateImage",
    "Condition",
    "EligibilityVerdict",
    "Question",
    "Quiz",
    "ScoreRecord",
    "SelectionSet",
    "Topic",
    "TrainingManifest",
    "__version__",
]
