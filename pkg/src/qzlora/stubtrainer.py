"""GPU-free stand-in for the external LoRA trainer.

Honors the trainer command contract ({manifest}, {dataset_dir}, {output}),
validates the manifest against the dataset directory, and writes a small
model file that records the mean luminance of the training images. The stub
image backend reads that value back, which gives mock pipelines a training
signal: better-lit selections produce better-lit generations.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .providers import mean_luminance
from .storage import dump_json
from .training import parse_manifest

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".webp")
MODEL_FORMAT = "qzlora-stub-lora-v1"


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="qzlora-stub-trainer")
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--output", required=True)
    args = parser.parse_args(argv)

    try:
        manifest = parse_manifest(Path(args.manifest).read_text(encoding="utf-8"))
    except Exception as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return 2

    dataset_dir = Path(args.dataset)
    if str(dataset_dir) != manifest.dataset_dir:
        print(f"dataset dir {dataset_dir} does not match manifest {manifest.dataset_dir}",
              file=sys.stderr)
        return 2
    images = sorted(p for p in dataset_dir.glob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    captions = sorted(dataset_dir.glob("*.txt"))
    if not images or len(images) != len(captions):
        print(f"dataset mismatch: {len(images)} images vs {len(captions)} captions",
              file=sys.stderr)
        return 2

    luminances = [mean_luminance(path.read_bytes()) for path in images]
    brightness = sum(luminances) / len(luminances)
    output = Path(args.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(dump_json({
        "model_format": MODEL_FORMAT,
        "base_model": manifest.base_model_tag,
        "instance_token": manifest.instance_token,
        "image_count": len(images),
        "epochs": manifest.epochs,
        "brightness": brightness,
    }), encoding="utf-8")
    print(f"trained stub model on {len(images)} images -> {output}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
