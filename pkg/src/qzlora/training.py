"""Trainer-facing dataset emission, hyperparameter manifests, and the
out-of-process trainer command contract.

The manifest is a flat `key = value` UTF-8 text file with keys in a fixed
order; any trainer that honors the {manifest}, {dataset_dir}, and {output}
command placeholders can be plugged in.
"""

from __future__ import annotations

import shlex
import subprocess
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import (
    EmptyCaptionAndSummary,
    InvalidOverride,
    MissingImage,
    TemplateError,
    TrainerFailed,
)
from .ingest import image_path, load_corpus
from .selection import SelectionSet
from .storage import atomic_write_bytes, atomic_write_text
from .topics import Topic

DEFAULT_EPOCHS = 20
DEFAULT_NUM_REPEATS = 5
DEFAULT_BATCH_SIZE = 1
DEFAULT_LEARNING_RATE = 1e-4
DEFAULT_OPTIMIZER = "AdamW8bit"
DEFAULT_RESOLUTION = 512
DEFAULT_BASE_MODEL = "sd-1.5"

MANIFEST_KEY_ORDER = (
    "topic_id", "condition", "dataset_dir", "instance_token", "epochs",
    "num_repeats", "batch_size", "learning_rate", "optimizer", "resolution",
    "base_model", "output",
)

_PLACEHOLDERS = ("{manifest}", "{dataset_dir}", "{output}")


@dataclass(frozen=True)
class TrainingManifest:
    topic_id: str
    condition_label: str
    dataset_dir: str
    instance_token: str
    output_model_path: str
    epochs: int = DEFAULT_EPOCHS
    num_repeats: int = DEFAULT_NUM_REPEATS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    optimizer_tag: str = DEFAULT_OPTIMIZER
    resolution: int = DEFAULT_RESOLUTION
    base_model_tag: str = DEFAULT_BASE_MODEL


def default_instance_token(topic_id: str) -> str:
    return topic_id.replace("-", "")


def emit_dataset(
    selection: SelectionSet,
    store_root: Path,
    topic: Topic,
    out_dir: Path,
    *,
    num_repeats: int = DEFAULT_NUM_REPEATS,
    instance_token: str | None = None,
) -> Path:
    """Write `<out_dir>/<num_repeats>_<token>/` with one image + one caption
    file per selected image, named by selection order.

    Captions fall back to the topic summary sentence when the stored caption
    is empty. Deterministic and idempotent: re-emission reproduces the same
    byte tree.
    """
    token = instance_token or default_instance_token(topic.topic_id)
    corpus = {c.image_id: c for c in load_corpus(store_root, selection.topic_id)}
    dest = Path(out_dir) / f"{num_repeats}_{token}"
    dest.mkdir(parents=True, exist_ok=True)
    for ordinal, image_id in enumerate(selection.image_ids):
        record = corpus.get(image_id)
        if record is None or record.corrupt:
            raise MissingImage(f"{selection.topic_id}: {image_id} missing or corrupt")
        source = image_path(store_root, selection.topic_id, image_id)
        caption = record.caption or topic.summary_sentence
        if not caption.strip():
            raise EmptyCaptionAndSummary(image_id)
        stem = f"{ordinal:03d}_{image_id}"
        atomic_write_bytes(dest / f"{stem}{source.suffix}", source.read_bytes())
        atomic_write_text(dest / f"{stem}.txt", caption)
    return dest


def emit_manifest(
    selection: SelectionSet,
    dataset_dir: Path,
    output_model_path: Path,
    overrides: dict | None = None,
    *,
    instance_token: str | None = None,
) -> TrainingManifest:
    """Manifest with the standard default hyperparameters unless overridden."""
    manifest = TrainingManifest(
        topic_id=selection.topic_id,
        condition_label=selection.condition.label,
        dataset_dir=str(dataset_dir),
        instance_token=instance_token or default_instance_token(selection.topic_id),
        output_model_path=str(output_model_path),
    )
    for key, value in (overrides or {}).items():
        if key not in {"epochs", "num_repeats", "batch_size", "learning_rate", "resolution",
                       "optimizer_tag", "base_model_tag", "instance_token"}:
            raise InvalidOverride(f"unknown hyperparameter {key!r}")
        if key in {"epochs", "num_repeats", "batch_size", "resolution"}:
            if not isinstance(value, int) or value <= 0:
                raise InvalidOverride(f"{key} must be a positive integer, got {value!r}")
        if key == "learning_rate" and not (isinstance(value, (int, float)) and value > 0):
            raise InvalidOverride(f"learning_rate must be positive, got {value!r}")
        manifest = replace(manifest, **{key: value})
    pairs = sorted(Path(dataset_dir).glob("*.txt")) if Path(dataset_dir).is_dir() else []
    if len(pairs) != len(selection.image_ids):
        raise MissingImage(
            f"dataset {dataset_dir} holds {len(pairs)} pairs, selection has {len(selection.image_ids)}"
        )
    return manifest


def serialize_manifest(manifest: TrainingManifest) -> str:
    values = {
        "topic_id": manifest.topic_id,
        "condition": manifest.condition_label,
        "dataset_dir": manifest.dataset_dir,
        "instance_token": manifest.instance_token,
        "epochs": manifest.epochs,
        "num_repeats": manifest.num_repeats,
        "batch_size": manifest.batch_size,
        "learning_rate": repr(float(manifest.learning_rate)),
        "optimizer": manifest.optimizer_tag,
        "resolution": manifest.resolution,
        "base_model": manifest.base_model_tag,
        "output": manifest.output_model_path,
    }
    return "".join(f"{key} = {values[key]}\n" for key in MANIFEST_KEY_ORDER)


def parse_manifest(text: str) -> TrainingManifest:
    values: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    missing = [key for key in MANIFEST_KEY_ORDER if key not in values]
    if missing:
        raise InvalidOverride(f"manifest missing keys: {missing}")
    return TrainingManifest(
        topic_id=values["topic_id"],
        condition_label=values["condition"],
        dataset_dir=values["dataset_dir"],
        instance_token=values["instance_token"],
        output_model_path=values["output"],
        epochs=int(values["epochs"]),
        num_repeats=int(values["num_repeats"]),
        batch_size=int(values["batch_size"]),
        learning_rate=float(values["learning_rate"]),
        optimizer_tag=values["optimizer"],
        resolution=int(values["resolution"]),
        base_model_tag=values["base_model"],
    )


def write_manifest(manifest: TrainingManifest, path: Path) -> Path:
    atomic_write_text(Path(path), serialize_manifest(manifest))
    return Path(path)


@dataclass(frozen=True)
class TrainerResult:
    exit_code: int
    output_model_path: str
    wall_time: float
    command: str
    log_path: str | None = None


def invoke_trainer(
    manifest: TrainingManifest,
    manifest_path: Path,
    command_template: str,
    *,
    log_path: Path | None = None,
    dry_run: bool = False,
) -> TrainerResult:
    """Substitute the command template and run the external trainer.

    dry_run validates and substitutes without spawning. Logs are streamed
    line-buffered to log_path. Nonzero exit raises TrainerFailed.
    """
    for placeholder in _PLACEHOLDERS:
        if placeholder not in command_template:
            raise TemplateError(f"command template missing {placeholder}")
    substitutions = {
        "manifest": str(manifest_path),
        "dataset_dir": manifest.dataset_dir,
        "output": manifest.output_model_path,
    }
    argv = [token.format(**substitutions) for token in shlex.split(command_template)]
    command = " ".join(shlex.quote(token) for token in argv)
    if dry_run:
        return TrainerResult(
            exit_code=0,
            output_model_path=manifest.output_model_path,
            wall_time=0.0,
            command=command,
            log_path=str(log_path) if log_path else None,
        )

    Path(manifest.output_model_path).parent.mkdir(parents=True, exist_ok=True)
    start = time.monotonic()
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_handle = open(log_path, "w", encoding="utf-8", buffering=1)
    else:
        log_handle = None
    try:
        proc = subprocess.Popen(argv, stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
        assert proc.stdout is not None
        for line in proc.stdout:
            if log_handle is not None:
                log_handle.write(line)
        exit_code = proc.wait()
    finally:
        if log_handle is not None:
            log_handle.close()
    wall_time = time.monotonic() - start
    if exit_code != 0:
        raise TrainerFailed(f"trainer exited {exit_code}; see {log_path}")
    return TrainerResult(
        exit_code=exit_code,
        output_model_path=manifest.output_model_path,
        wall_time=wall_time,
        command=command,
        log_path=str(log_path) if log_path else None,
    )
