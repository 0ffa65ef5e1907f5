"""Exception hierarchy for the qzlora pipeline."""


class QzloraError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(QzloraError):
    """Configuration file missing, unparseable, or invalid."""


# --- topic registry / ingestion ---------------------------------------------

class InvalidTopic(QzloraError):
    """Topic violates a registry invariant."""


class DuplicateTopic(QzloraError):
    """A topic_id is already registered with a different payload."""


class UnknownTopic(QzloraError):
    """No ingested corpus (or registry entry) for the requested topic."""


class SourceUnavailable(QzloraError):
    """Image source listing or download failed after retries."""


class NoImagesFound(QzloraError):
    """Source listing contained no files for the topic."""


# --- quiz generation ---------------------------------------------------------

class InvalidQuiz(QzloraError):
    """Quiz violates a structural invariant."""


class ProviderFailure(QzloraError):
    """A text or vision provider call failed after retries."""


class ValidationExhausted(QzloraError):
    """Could not collect enough valid questions within the retry budget."""


# --- scoring -----------------------------------------------------------------

class UndecodableImage(QzloraError):
    """Subject bytes could not be decoded as an image."""


# --- selection ---------------------------------------------------------------

class MixedQuiz(QzloraError):
    """Score records from different quizzes or models cannot be ranked together."""


class EmptyRanking(QzloraError):
    """Top-k selection requires a nonempty ranking."""


class EmptyCorpus(QzloraError):
    """Random selection requires at least one non-corrupt candidate."""


# --- training orchestration --------------------------------------------------

class MissingImage(QzloraError):
    """A selected image is absent or corrupt in the corpus store."""


class EmptyCaptionAndSummary(QzloraError):
    """Neither a stored caption nor a topic summary is available."""


class InvalidOverride(QzloraError):
    """A hyperparameter override is out of range."""


class TemplateError(QzloraError):
    """Trainer command template is missing a required placeholder."""


class TrainerFailed(QzloraError):
    """External trainer process exited nonzero."""


# --- generation --------------------------------------------------------------

class MissingTemplate(QzloraError):
    """Prompt template set lacks an entry for the requested style."""


class BackendUnavailable(QzloraError):
    """Image backend unreachable after retries."""


class MissingLoRA(QzloraError):
    """Condition requires a trained model file that does not exist."""


# --- statistics --------------------------------------------------------------

class EmptyGroup(QzloraError):
    """A condition group has no accuracy values."""


class NoComparableTopics(QzloraError):
    """A condition pair shares no jointly-scored topics."""


class MissingKColumn(QzloraError):
    """The k-sweep table has no values for a requested k."""


class DegenerateInput(QzloraError):
    """Correlation input is constant or too short."""


# --- pipeline ----------------------------------------------------------------

class UpstreamIncomplete(QzloraError):
    """A stage was requested before its upstream stages finished."""
