"""Text-completion and vision provider contracts, HTTP clients, and mocks.

Request digests are SHA-256 over a canonical JSON rendering of the request
fields, which gives the fixture-backed mocks a stable lookup key and keeps
every mock a pure function of its request.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .errors import ProviderFailure
from .rng import SplitMix64, derive_seed

log = logging.getLogger(__name__)

TEXT_API_KEY_ENV = "TEXT_API_KEY"
VISION_API_KEY_ENV = "VISION_API_KEY"
RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = 1.0


@dataclass(frozen=True)
class TextRequest:
    model_id: str
    system_text: str
    user_text: str
    max_tokens: int = 2048
    temperature: float = 0.0


@dataclass(frozen=True)
class TextResponse:
    text: str
    token_usage: dict = field(default_factory=dict)


class TextCompletionProvider(Protocol):
    def complete(self, request: TextRequest) -> TextResponse: ...


@dataclass(frozen=True)
class VisionRequest:
    model_id: str
    system_text: str
    user_text: str
    image_bytes: bytes
    media_type: str = "image/png"


@dataclass(frozen=True)
class VisionResponse:
    text: str


class VisionProvider(Protocol):
    def answer(self, request: VisionRequest) -> VisionResponse: ...


def text_request_digest(request: TextRequest) -> str:
    payload = json.dumps({
        "model_id": request.model_id,
        "system_text": request.system_text,
        "user_text": request.user_text,
        "max_tokens": request.max_tokens,
        "temperature": request.temperature,
    }, ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def vision_request_digest(request: VisionRequest) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({
        "model_id": request.model_id,
        "system_text": request.system_text,
        "user_text": request.user_text,
        "media_type": request.media_type,
    }, ensure_ascii=False, sort_keys=True).encode("utf-8"))
    h.update(b"\0")
    h.update(request.image_bytes)
    return h.hexdigest()


def _retry_call(fn, what: str, *, sleep=time.sleep):
    delay = RETRY_BACKOFF_S
    last: Exception | None = None
    for attempt in range(RETRY_ATTEMPTS):
        try:
            return fn()
        except Exception as exc:
            last = exc
            log.warning("%s failed (attempt %d/%d): %s", what, attempt + 1, RETRY_ATTEMPTS, exc)
            if attempt + 1 < RETRY_ATTEMPTS:
                sleep(delay)
                delay *= 2
    raise ProviderFailure(f"{what}: {last}") from last


def _api_key(env_name: str) -> str:
    key = os.environ.get(env_name, "")
    if not key:
        raise ProviderFailure(f"{env_name} is not set")
    return key


class HttpTextProvider:
    """Chat-completions endpoint client. API key comes from TEXT_API_KEY."""

    def __init__(self, endpoint: str, session, *, key_env: str = TEXT_API_KEY_ENV, sleep=time.sleep):
        self.endpoint = endpoint
        self.session = session
        self.key_env = key_env
        self._sleep = sleep

    def complete(self, request: TextRequest) -> TextResponse:
        headers = {"Authorization": f"Bearer {_api_key(self.key_env)}"}
        body = {
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }

        def _call() -> TextResponse:
            resp = self.session.post(self.endpoint, json=body, headers=headers, timeout=120)
            resp.raise_for_status()
            payload = resp.json()
            return TextResponse(
                text=payload["choices"][0]["message"]["content"],
                token_usage=payload.get("usage", {}),
            )

        return _retry_call(_call, f"text completion via {self.endpoint}", sleep=self._sleep)


class HttpVisionProvider:
    """Chat-completions-with-image endpoint client. Key from VISION_API_KEY."""

    def __init__(self, endpoint: str, session, *, key_env: str = VISION_API_KEY_ENV, sleep=time.sleep):
        self.endpoint = endpoint
        self.session = session
        self.key_env = key_env
        self._sleep = sleep

    def answer(self, request: VisionRequest) -> VisionResponse:
        headers = {"Authorization": f"Bearer {_api_key(self.key_env)}"}
        encoded = base64.b64encode(request.image_bytes).decode("ascii")
        body = {
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": [
                    {"type": "text", "text": request.user_text},
                    {"type": "image_url",
                     "image_url": {"url": f"data:{request.media_type};base64,{encoded}"}},
                ]},
            ],
        }

        def _call() -> VisionResponse:
            resp = self.session.post(self.endpoint, json=body, headers=headers, timeout=120)
            resp.raise_for_status()
            return VisionResponse(text=resp.json()["choices"][0]["message"]["content"])

        return _retry_call(_call, f"vision answer via {self.endpoint}", sleep=self._sleep)


class FixtureTextProvider:
    """Deterministic mock: response text loaded from <fixture_dir>/<digest>.txt."""

    def __init__(self, fixture_dir: Path):
        self.fixture_dir = Path(fixture_dir)
        self.call_log: list[TextRequest] = []

    def complete(self, request: TextRequest) -> TextResponse:
        self.call_log.append(request)
        path = self.fixture_dir / f"{text_request_digest(request)}.txt"
        if not path.exists():
            raise ProviderFailure(f"no fixture for request digest {path.stem}")
        return TextResponse(text=path.read_text(encoding="utf-8"))

    def store_response(self, request: TextRequest, text: str) -> Path:
        """Test helper: register the canned response for a request."""
        self.fixture_dir.mkdir(parents=True, exist_ok=True)
        path = self.fixture_dir / f"{text_request_digest(request)}.txt"
        path.write_text(text, encoding="utf-8")
        return path


_COUNT_RE = re.compile(r"Write (\d+) multiple-choice questions")
_OPTIONS_RE = re.compile(r"exactly (\d+) answer options")

_SYNTH_STEM_TRAITS = (
    "surface texture", "dominant color", "overall shape", "relative size",
    "material finish", "edge pattern", "typical setting", "surface markings",
)
_SYNTH_ATTRS = ("texture", "color", "shape", "size", "material", "pattern", "context", "other")


class SyntheticTextProvider:
    """Deterministic mock that emits a valid question payload for any request.

    The payload is a pure function of the request digest, so repeated calls
    (and different parallelism) reproduce identical quizzes. Used by the
    all-mock pipeline mode, where fixture files cannot be precomputed.
    """

    def __init__(self):
        self.call_log: list[TextRequest] = []

    def complete(self, request: TextRequest) -> TextResponse:
        self.call_log.append(request)
        digest = text_request_digest(request)
        count_m = _COUNT_RE.search(request.user_text)
        options_m = _OPTIONS_RE.search(request.user_text)
        count = int(count_m.group(1)) if count_m else 10
        option_count = int(options_m.group(1)) if options_m else 4
        rng = SplitMix64(derive_seed("synthetic-text", digest))
        blocks = []
        for i in range(count):
            trait = _SYNTH_STEM_TRAITS[rng.next_below(len(_SYNTH_STEM_TRAITS))]
            token = f"{digest[:8]}-{i:02d}"
            correct = rng.next_below(option_count)
            lines = [f"Q: Which {trait} does the subject show? [{token}]"]
            for j in range(option_count):
                letter = chr(ord("A") + j)
                lines.append(f"{letter}) {trait} variant {letter}{rng.next_below(1000):03d}")
            lines.append(f"Answer: {chr(ord('A') + correct)}")
            lines.append(f"Attribute: {_SYNTH_ATTRS[rng.next_below(len(_SYNTH_ATTRS))]}")
            blocks.append("\n".join(lines))
        return TextResponse(text="\n\n".join(blocks), token_usage={"synthetic": True})


class LuminanceKeyedVision:
    """Deterministic vision mock keyed by (image digest, question digest).

    Answers a question correctly with probability that rises linearly with
    the mean luminance of the attached image, using a hash-derived uniform
    draw, so results are independent of call order and parallelism. Correct
    answers require the quiz to be registered first (the mock needs the key).
    """

    def __init__(self, *, p_floor: float = 0.05, p_span: float = 0.90, salt: int = 0):
        self.p_floor = p_floor
        self.p_span = p_span
        self.salt = salt
        self._answer_key: dict[str, tuple[int, int]] = {}
        self._luminance_cache: dict[str, float] = {}
        self.call_count = 0
        # (image digest, question digest, reply) per call; replaying a logged
        # request reproduces the logged reply since answers are pure.
        self.call_log: list[tuple[str, str, str]] = []

    def register_question(self, user_text: str, correct_index: int, option_count: int) -> None:
        digest = hashlib.sha256(user_text.encode("utf-8")).hexdigest()
        self._answer_key[digest] = (correct_index, option_count)

    def answer(self, request: VisionRequest) -> VisionResponse:
        self.call_count += 1
        q_digest = hashlib.sha256(request.user_text.encode("utf-8")).hexdigest()
        image_digest = hashlib.sha256(request.image_bytes).hexdigest()
        keyed = self._answer_key.get(q_digest)
        if keyed is None:
            reply = "I cannot determine the answer."
            self.call_log.append((image_digest, q_digest, reply))
            return VisionResponse(text=reply)
        correct_index, option_count = keyed
        lum = self._luminance(image_digest, request.image_bytes)
        p_correct = min(0.98, max(0.02, self.p_floor + self.p_span * lum))
        draw = SplitMix64(derive_seed("vision-mock", image_digest, q_digest, self.salt)).next_unit()
        if draw < p_correct:
            chosen = correct_index
        else:
            wrong_offset = 1 + SplitMix64(
                derive_seed("vision-mock-wrong", image_digest, q_digest, self.salt)
            ).next_below(option_count - 1)
            chosen = (correct_index + wrong_offset) % option_count
        reply = f"Answer: {chr(ord('A') + chosen)}"
        self.call_log.append((image_digest, q_digest, reply))
        return VisionResponse(text=reply)

    def _luminance(self, digest: str, data: bytes) -> float:
        cached = self._luminance_cache.get(digest)
        if cached is None:
            cached = mean_luminance(data)
            self._luminance_cache[digest] = cached
        return cached


def mean_luminance(image_data: bytes) -> float:
    """Mean grayscale intensity of an encoded image, scaled to [0, 1]."""
    import io

    from PIL import Image, ImageStat

    with Image.open(io.BytesIO(image_data)) as img:
        stat = ImageStat.Stat(img.convert("L"))
    return stat.mean[0] / 255.0
