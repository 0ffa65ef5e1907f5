"""Style-conditioned prompt building and the text-to-image backend driver."""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from .errors import BackendUnavailable, MissingLoRA, MissingTemplate
from .rng import SplitMix64, derive_seed
from .selection import Condition, REAL_KINDS
from .storage import atomic_write_bytes, read_json, sha256_hex, write_json
from .topics import Topic

POSITIVE_PREFIX = "Generate the image of "
DEFAULT_SAMPLES_PER_CONDITION = 5
DEFAULT_STEPS = 30
DEFAULT_CFG = 7.0
DEFAULT_SIZE = 512


@dataclass(frozen=True)
class PromptPair:
    positive: str
    negative: str
    style: str


@dataclass(frozen=True)
class StyleTemplate:
    positive_suffix: str
    negative: str


@dataclass(frozen=True)
class TemplateSet:
    styles: dict[str, StyleTemplate]
    details: dict[tuple[str, str], str] = field(default_factory=dict)  # (style, topic_id) -> text


def load_template_set(path: Path | None = None) -> TemplateSet:
    """Load a template TOML, defaulting to the shipped file."""
    if path is None:
        from importlib import resources

        raw = resources.files("qzlora").joinpath("templates/generation.toml").read_bytes()
    else:
        raw = Path(path).read_bytes()
    data = tomllib.loads(raw.decode("utf-8"))
    styles = {
        name: StyleTemplate(
            positive_suffix=entry.get("positive_suffix", ""),
            negative=entry.get("negative", ""),
        )
        for name, entry in data.get("styles", {}).items()
    }
    details = {
        (style, topic_id): text
        for style, topics in data.get("details", {}).items()
        for topic_id, text in topics.items()
    }
    return TemplateSet(styles=styles, details=details)


def build_prompts(topic: Topic, style: str, template_set: TemplateSet) -> PromptPair:
    """Positive = prefix + summary + shared style suffix + optional per-topic
    detail, period-terminated; negative = the style's term list. Pure."""
    template = template_set.styles.get(style)
    if template is None or not template.positive_suffix.strip() or not template.negative.strip():
        raise MissingTemplate(f"no usable template for style {style!r}")
    detail = template_set.details.get((style, topic.topic_id), "")
    positive = f"{POSITIVE_PREFIX}{topic.summary_sentence}, {template.positive_suffix}"
    if detail:
        positive += f", {detail}"
    positive += "."
    return PromptPair(positive=positive, negative=template.negative, style=style)


@dataclass(frozen=True)
class ImageRequest:
    positive: str
    negative: str
    seed: int
    steps: int = DEFAULT_STEPS
    cfg: float = DEFAULT_CFG
    width: int = DEFAULT_SIZE
    height: int = DEFAULT_SIZE
    lora_tag: str | None = None
    lora_weight: float = 1.0


@dataclass(frozen=True)
class ImageResult:
    image_bytes: bytes
    media_type: str = "image/png"
    metadata: dict = field(default_factory=dict)


class ImageBackend(Protocol):
    def generate(self, request: ImageRequest) -> ImageResult: ...


class StubImageBackend:
    """Seed-deterministic noise renderer honoring the backend contract.

    Pixel intensities center on a brightness level: the base level without a
    LoRA, or the level recorded in the stub model file named by lora_tag.
    Identical requests produce identical bytes.
    """

    def __init__(self, *, model_tag: str = "stub-diffusion", base_brightness: float = 0.15,
                 size: int = 64, jitter: int = 16):
        self.model_tag = model_tag
        self.base_brightness = base_brightness
        self.size = size
        self.jitter = jitter

    def generate(self, request: ImageRequest) -> ImageResult:
        from PIL import Image

        brightness = self.base_brightness
        if request.lora_tag:
            model_path = Path(request.lora_tag)
            if not model_path.exists():
                raise MissingLoRA(request.lora_tag)
            brightness = float(read_json(model_path).get("brightness", self.base_brightness))
        center = brightness * 255.0
        # Seed alone keys the noise; the model identity enters via brightness,
        # never via the (store-specific) lora_tag path.
        rng = SplitMix64(derive_seed("stub-image", request.seed))
        span = 2 * self.jitter + 1
        pixels = bytes(
            max(0, min(255, round(center) + rng.next_below(span) - self.jitter))
            for _ in range(self.size * self.size)
        )
        img = Image.frombytes("L", (self.size, self.size), pixels)
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        metadata = {"seed": request.seed, "model_tag": self.model_tag, "backend": "stub"}
        if request.lora_tag:
            metadata["lora_tag"] = request.lora_tag
        return ImageResult(image_bytes=buf.getvalue(), media_type="image/png", metadata=metadata)


class HttpImageBackend:
    """Client for the diffusion inference HTTP contract (POST /generate)."""

    def __init__(self, endpoint: str, session, *, retries: int = 3, sleep=time.sleep):
        self.endpoint = endpoint.rstrip("/")
        self.session = session
        self.retries = retries
        self._sleep = sleep

    def generate(self, request: ImageRequest) -> ImageResult:
        import base64

        body = {
            "positive": request.positive,
            "negative": request.negative,
            "seed": request.seed,
            "steps": request.steps,
            "cfg": request.cfg,
            "width": request.width,
            "height": request.height,
        }
        if request.lora_tag is not None:
            body["lora_tag"] = request.lora_tag
            body["lora_weight"] = request.lora_weight

        delay = 1.0
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self.session.post(f"{self.endpoint}/generate", json=body, timeout=300)
                resp.raise_for_status()
                payload = resp.json()
                return ImageResult(
                    image_bytes=base64.b64decode(payload["image_base64"]),
                    media_type=payload.get("media_type", "image/png"),
                    metadata=payload.get("metadata", {}),
                )
            except Exception as exc:
                last = exc
                if attempt + 1 < self.retries:
                    self._sleep(delay)
                    delay *= 2
        raise BackendUnavailable(f"{self.endpoint}: {last}") from last


@dataclass(frozen=True)
class GeneratedImage:
    gen_id: str
    topic_id: str
    condition_label: str
    sample_index: int
    seed: int
    content_hash: str
    backend_model_tag: str
    lora_tag: str | None = None


def derive_sample_seed(topic_id: str, condition_label: str, sample_index: int) -> int:
    """Deterministic per-sample seed; pure function of its arguments.

    Constrained to 48 bits: backend requests cross JSON, where integers above
    2**53 lose precision, so wire seeds must stay JSON-safe.
    """
    return derive_seed("gen-seed", topic_id, condition_label, sample_index) >> 16


def generation_dir(store_root: Path, topic_id: str, condition: Condition) -> Path:
    return Path(store_root) / "gen" / topic_id / condition.label


def generate_samples(
    topic: Topic,
    condition: Condition,
    prompts: PromptPair,
    backend: ImageBackend,
    *,
    n: int = DEFAULT_SAMPLES_PER_CONDITION,
    seeds: Sequence[int] | None = None,
    lora_tag: str | None = None,
    store_root: Path | None = None,
    steps: int = DEFAULT_STEPS,
    cfg: float = DEFAULT_CFG,
    width: int = DEFAULT_SIZE,
    height: int = DEFAULT_SIZE,
    lora_weight: float = 1.0,
) -> list[GeneratedImage]:
    """Produce n samples with per-sample seeds (provided or derived); images
    are stored content-addressed and records persisted alongside."""
    if condition.kind in REAL_KINDS:
        raise ValueError(f"{condition.label} evaluates real images; nothing to generate")
    if condition.trains:
        if not lora_tag:
            raise MissingLoRA(f"{condition.label} requires a trained model")
        if not Path(lora_tag).exists():
            raise MissingLoRA(lora_tag)
    else:
        lora_tag = None
    if seeds is not None and len(seeds) != n:
        raise ValueError(f"{len(seeds)} seeds provided for n={n}")

    records: list[GeneratedImage] = []
    results: list[tuple[GeneratedImage, ImageResult]] = []
    for index in range(n):
        seed = seeds[index] if seeds is not None else derive_sample_seed(topic.topic_id, condition.label, index)
        request = ImageRequest(
            positive=prompts.positive, negative=prompts.negative, seed=seed,
            steps=steps, cfg=cfg, width=width, height=height,
            lora_tag=lora_tag, lora_weight=lora_weight,
        )
        result = backend.generate(request)
        content_hash = sha256_hex(result.image_bytes)
        record = GeneratedImage(
            gen_id=f"{topic.topic_id}/{condition.label}#{index}",
            topic_id=topic.topic_id,
            condition_label=condition.label,
            sample_index=index,
            seed=seed,
            content_hash=content_hash,
            backend_model_tag=str(result.metadata.get("model_tag", "")),
            lora_tag=lora_tag,
        )
        records.append(record)
        results.append((record, result))

    if store_root is not None:
        out_dir = generation_dir(store_root, topic.topic_id, condition)
        for record, result in results:
            ext = ".png" if result.media_type.endswith("png") else ".jpg"
            atomic_write_bytes(
                out_dir / f"{record.sample_index:02d}_{record.content_hash[:12]}{ext}",
                result.image_bytes,
            )
        write_json(out_dir / "records.json", [
            {
                "gen_id": r.gen_id,
                "topic_id": r.topic_id,
                "condition_label": r.condition_label,
                "sample_index": r.sample_index,
                "seed": r.seed,
                "content_hash": r.content_hash,
                "backend_model_tag": r.backend_model_tag,
                "lora_tag": r.lora_tag,
            }
            for r in records
        ])
    return records


def load_generated(store_root: Path, topic_id: str, condition: Condition) -> list[GeneratedImage]:
    out_dir = generation_dir(store_root, topic_id, condition)
    raw = read_json(out_dir / "records.json")
    return [GeneratedImage(**item) for item in raw]


def generated_image_bytes(store_root: Path, record: GeneratedImage, condition: Condition) -> bytes:
    out_dir = generation_dir(store_root, record.topic_id, condition)
    matches = sorted(out_dir.glob(f"{record.sample_index:02d}_{record.content_hash[:12]}.*"))
    if not matches:
        raise FileNotFoundError(f"no stored image for {record.gen_id}")
    return matches[0].read_bytes()
