"""Bundled synthetic workspace for mock pipeline runs and tests.

Creates a local-directory image source (constant-intensity PNGs whose
brightness spread gives the luminance-keyed mock VLM a quality gradient),
a topic registry, and a ready-to-run mock-mode config file.
"""

from __future__ import annotations

import io
import sys
from pathlib import Path

from PIL import Image

from .storage import atomic_write_bytes, write_json
from .topics import Topic, register_topic

IMAGE_SIDE = 256  # ingest skips anything smaller

DEMO_TOPICS = (
    Topic(
        topic_id="harlequin-finch",
        wiki_url="https://example.org/wiki/Harlequin_finch",
        summary_sentence=(
            "The harlequin finch, a small songbird with a patchwork of "
            "slate-blue and rust feathers across its wings and chest"
        ),
        category="Biology",
        monthly_views=1200,
        distractor_ids=("glass-spire-pavilion", "ember-dumpling"),
    ),
    Topic(
        topic_id="glass-spire-pavilion",
        wiki_url="https://example.org/wiki/Glass_Spire_Pavilion",
        summary_sentence=(
            "The Glass Spire Pavilion, a slender lattice tower of tinted "
            "glass panels rising above a circular reflecting pool"
        ),
        category="Architecture",
        monthly_views=800,
        distractor_ids=("harlequin-finch", "ember-dumpling"),
    ),
    Topic(
        topic_id="ember-dumpling",
        wiki_url="https://example.org/wiki/Ember_dumpling",
        summary_sentence=(
            "The ember dumpling, a crescent-shaped steamed pastry with a "
            "charred amber crust and a sweet roasted-squash filling"
        ),
        category="FoodAndDrink",
        monthly_views=2400,
        distractor_ids=("harlequin-finch", "glass-spire-pavilion"),
    ),
)


def flat_png(brightness: float, side: int = IMAGE_SIDE) -> bytes:
    """Constant-intensity grayscale PNG; mean luminance equals brightness."""
    level = max(0, min(255, round(brightness * 255.0)))
    img = Image.new("L", (side, side), color=level)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def demo_brightness(topic_index: int, image_index: int, image_count: int) -> float:
    """Evenly spread per-topic brightness levels, offset so no two topics
    share identical image bytes."""
    spread = image_index / max(1, image_count - 1)
    return 0.08 + 0.84 * spread + 0.01 * topic_index


def make_demo_workspace(
    root: Path,
    *,
    topic_count: int = 3,
    images_per_topic: int = 10,
    parallelism_score: int = 8,
    seed: int = 0,
    conditions: list[str] | None = None,
    ks: list[int] | None = None,
    question_count: int = 10,
    samples_per_condition: int = 5,
) -> Path:
    """Write source images, registry, and config under root; returns the
    config path. Deterministic for fixed arguments."""
    if not 1 <= topic_count <= len(DEMO_TOPICS):
        raise ValueError(f"topic_count must be in 1..{len(DEMO_TOPICS)}")
    root = Path(root).resolve()
    root.mkdir(parents=True, exist_ok=True)
    topics = DEMO_TOPICS[:topic_count]

    registry_path = root / "registry.json"
    for topic in topics:
        kept = tuple(d for d in topic.distractor_ids
                     if d in {t.topic_id for t in topics})
        register_topic(registry_path, Topic(
            topic_id=topic.topic_id,
            wiki_url=topic.wiki_url,
            summary_sentence=topic.summary_sentence,
            category=topic.category,
            monthly_views=topic.monthly_views,
            distractor_ids=kept,
        ))

    source_root = root / "source"
    for topic_index, topic in enumerate(topics):
        topic_dir = source_root / topic.topic_id
        captions = {}
        for i in range(images_per_topic):
            name = f"img{i:02d}.png"
            data = flat_png(demo_brightness(topic_index, i, images_per_topic))
            atomic_write_bytes(topic_dir / name, data)
            if i % 2 == 0:
                captions[name] = f"A study photograph of the {topic.topic_id.replace('-', ' ')}, plate {i}"
        write_json(topic_dir / "captions.json", captions)

    trainer_template = (
        f"{sys.executable} -m qzlora.stubtrainer "
        "--manifest {manifest} --dataset {dataset_dir} --output {output}"
    )
    ks = ks if ks is not None else [2, 5, 10, 12, 15]
    ks_text = "[" + ", ".join(str(k) for k in ks) + "]"
    if conditions is not None:
        conditions_text = "conditions = [" + ", ".join(f'"{c}"' for c in conditions) + "]\n"
    else:
        conditions_text = ""
    config_path = root / "config.toml"
    config_path.write_text(f'''# Mock-mode pipeline configuration (generated demo workspace).

[paths]
registry = "{registry_path}"
store_root = "{root / 'store'}"

[source]
kind = "local"
root = "{source_root}"

[providers]
mode = "mock"
text_model = "mock-text-v1"
vision_model = "mock-vision-v1"
image_backend = "stub"
backend_model_tag = "stub-diffusion"

[trainer]
command_template = "{trainer_template}"

[pipeline]
deterministic = true
seed = {seed}
question_count = {question_count}
option_count = 4
samples_per_condition = {samples_per_condition}
ks = {ks_text}
ksweep_subset_size = 20
parallelism_score = {parallelism_score}
parallelism_fetch = 4
fetch_cap = 55
{conditions_text}''', encoding="utf-8")
    return config_path
