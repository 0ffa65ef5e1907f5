from __future__ import annotations

import sys
from pathlib import Path

import pytest

from conftest import make_png
from qzlora.errors import (
    EmptyCaptionAndSummary,
    InvalidOverride,
    MissingImage,
    TemplateError,
    TrainerFailed,
)
from qzlora.ingest import fetch_candidates
from qzlora.selection import Condition, SelectionSet
from qzlora.storage import tree_digest
from qzlora.topics import Topic
from qzlora.training import (
    TrainingManifest,
    emit_dataset,
    emit_manifest,
    invoke_trainer,
    parse_manifest,
    serialize_manifest,
    write_manifest,
)

GOLDEN_DEFAULT_MANIFEST = """topic_id = gujia
condition = qzlora-top-15/realistic
dataset_dir = datasets/gujia/qzlora-top-15
instance_token = gujia
epochs = 20
num_repeats = 5
batch_size = 1
learning_rate = 0.0001
optimizer = AdamW8bit
resolution = 512
base_model = sd-1.5
output = models/gujia/qzlora-top-15.safetensors
"""


class DirSource:
    def __init__(self, files, captions=None):
        self.files = files
        self.captions = captions or {}

    def list_entries(self, topic):
        from qzlora.ingest import SourceEntry

        return [SourceEntry(url=n, description=self.captions.get(n, ""))
                for n in sorted(self.files)]

    def fetch(self, url):
        return self.files[url]


def _corpus(tmp_path, topic, count=15, captions=None):
    files = {f"f{i:02d}.png": make_png(0.2 + i / 40, side=256) for i in range(count)}
    return fetch_candidates(topic, DirSource(files, captions), tmp_path)


def _selection(topic_id, ids, k=None, style="realistic"):
    k = k if k is not None else len(ids)
    return SelectionSet(
        topic_id=topic_id, condition=Condition("qzlora-top", k, style),
        image_ids=tuple(ids), source_quiz_id="q1",
    )


class TestEmitDataset:
    def test_fifteen_images_thirty_files(self, tmp_path, sample_topic):
        records = _corpus(tmp_path, sample_topic, 15)
        selection = _selection(sample_topic.topic_id, [r.image_id for r in records])
        dataset = emit_dataset(selection, tmp_path, sample_topic, tmp_path / "out")
        assert dataset.name == "5_harlequinfinch"
        files = sorted(p.name for p in dataset.iterdir())
        assert len(files) == 30
        assert sum(1 for f in files if f.endswith(".txt")) == 15

    def test_empty_caption_falls_back_to_summary(self, tmp_path, sample_topic):
        records = _corpus(tmp_path, sample_topic, 2)  # no captions configured
        selection = _selection(sample_topic.topic_id, [records[0].image_id], k=1)
        dataset = emit_dataset(selection, tmp_path, sample_topic, tmp_path / "out")
        caption = next(dataset.glob("*.txt")).read_text(encoding="utf-8")
        assert caption == sample_topic.summary_sentence

    def test_reemission_is_byte_identical(self, tmp_path, sample_topic):
        records = _corpus(tmp_path, sample_topic, 6)
        selection = _selection(sample_topic.topic_id, [r.image_id for r in records])
        first = emit_dataset(selection, tmp_path, sample_topic, tmp_path / "out")
        digest = tree_digest(first)
        second = emit_dataset(selection, tmp_path, sample_topic, tmp_path / "out")
        assert tree_digest(second) == digest

    def test_missing_image_rejected(self, tmp_path, sample_topic):
        _corpus(tmp_path, sample_topic, 2)
        selection = _selection(sample_topic.topic_id, ["harlequin-finch-9999"], k=1)
        with pytest.raises(MissingImage):
            emit_dataset(selection, tmp_path, sample_topic, tmp_path / "out")

    def test_no_caption_and_blank_summary(self, tmp_path, sample_topic):
        records = _corpus(tmp_path, sample_topic, 1)
        blank = Topic(
            topic_id=sample_topic.topic_id, wiki_url=sample_topic.wiki_url,
            summary_sentence=" ", category="Biology",
        )
        selection = _selection(sample_topic.topic_id, [records[0].image_id], k=1)
        with pytest.raises(EmptyCaptionAndSummary):
            emit_dataset(selection, tmp_path, blank, tmp_path / "out")


class TestManifest:
    def _dataset(self, tmp_path, n=15):
        d = tmp_path / "datasets" / "gujia" / "qzlora-top-15"
        d.mkdir(parents=True)
        for i in range(n):
            (d / f"{i:03d}_img.png").write_bytes(make_png(0.5))
            (d / f"{i:03d}_img.txt").write_text("caption", encoding="utf-8")
        return d

    def test_defaults_match_golden_bytes(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        dataset = self._dataset(tmp_path)
        selection = _selection("gujia", [f"gujia-{i:04d}" for i in range(15)])
        manifest = emit_manifest(selection, Path("datasets/gujia/qzlora-top-15"),
                                 Path("models/gujia/qzlora-top-15.safetensors"))
        assert manifest.epochs == 20
        assert manifest.num_repeats == 5
        assert manifest.batch_size == 1
        assert manifest.learning_rate == 1e-4
        assert manifest.resolution == 512
        assert serialize_manifest(manifest) == GOLDEN_DEFAULT_MANIFEST

    def test_round_trip(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        self._dataset(tmp_path)
        selection = _selection("gujia", [f"gujia-{i:04d}" for i in range(15)])
        manifest = emit_manifest(selection, Path("datasets/gujia/qzlora-top-15"),
                                 Path("models/gujia/qzlora-top-15.safetensors"),
                                 overrides={"epochs": 3})
        assert parse_manifest(serialize_manifest(manifest)) == manifest

    def test_override_epochs_only(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        self._dataset(tmp_path)
        selection = _selection("gujia", [f"gujia-{i:04d}" for i in range(15)])
        manifest = emit_manifest(selection, Path("datasets/gujia/qzlora-top-15"),
                                 Path("m.safetensors"), overrides={"epochs": 1})
        assert manifest.epochs == 1
        assert manifest.num_repeats == 5
        assert manifest.batch_size == 1

    @pytest.mark.parametrize("overrides", [
        {"batch_size": 0},
        {"epochs": -1},
        {"learning_rate": 0},
        {"resolution": 0},
        {"mystery_knob": 3},
    ])
    def test_invalid_overrides(self, tmp_path, monkeypatch, overrides):
        monkeypatch.chdir(tmp_path)
        self._dataset(tmp_path)
        selection = _selection("gujia", [f"gujia-{i:04d}" for i in range(15)])
        with pytest.raises(InvalidOverride):
            emit_manifest(selection, Path("datasets/gujia/qzlora-top-15"),
                          Path("m.safetensors"), overrides=overrides)

    def test_dataset_count_mismatch(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        self._dataset(tmp_path, n=3)
        selection = _selection("gujia", [f"gujia-{i:04d}" for i in range(15)])
        with pytest.raises(MissingImage):
            emit_manifest(selection, Path("datasets/gujia/qzlora-top-15"), Path("m.safetensors"))


def _manifest(tmp_path, dataset_dir) -> TrainingManifest:
    return TrainingManifest(
        topic_id="gujia", condition_label="qzlora-top-2/realistic",
        dataset_dir=str(dataset_dir), instance_token="gujia",
        output_model_path=str(tmp_path / "models" / "out.safetensors"),
    )


class TestInvokeTrainer:
    def test_dry_run_substitutes_without_spawning(self, tmp_path):
        manifest = _manifest(tmp_path, tmp_path / "ds")
        result = invoke_trainer(manifest, tmp_path / "m.cfg",
                                "trainer --manifest {manifest} --data {dataset_dir} --out {output}",
                                dry_run=True)
        assert result.exit_code == 0
        assert str(tmp_path / "m.cfg") in result.command
        assert str(tmp_path / "models" / "out.safetensors") in result.command
        assert not (tmp_path / "models" / "out.safetensors").exists()

    def test_missing_placeholder(self, tmp_path):
        manifest = _manifest(tmp_path, tmp_path / "ds")
        with pytest.raises(TemplateError):
            invoke_trainer(manifest, tmp_path / "m.cfg",
                           "trainer --manifest {manifest} --data {dataset_dir}", dry_run=True)

    def test_stub_script_produces_model(self, tmp_path):
        script = tmp_path / "toucher.py"
        script.write_text(
            "import sys, pathlib\n"
            "out = pathlib.Path(sys.argv[sys.argv.index('--out') + 1])\n"
            "out.parent.mkdir(parents=True, exist_ok=True)\n"
            "out.write_text('model')\n"
            "print('trained')\n",
            encoding="utf-8",
        )
        dataset = tmp_path / "ds"
        dataset.mkdir()
        (dataset / "000_a.png").write_bytes(make_png(0.4))
        (dataset / "000_a.txt").write_text("c", encoding="utf-8")
        manifest = _manifest(tmp_path, dataset)
        manifest_path = write_manifest(manifest, tmp_path / "m.cfg")
        digest_before = tree_digest(dataset)
        template = (f"{sys.executable} {script} --manifest {{manifest}} "
                    "--data {dataset_dir} --out {output}")
        result = invoke_trainer(manifest, manifest_path, template,
                                log_path=tmp_path / "run.log")
        assert result.exit_code == 0
        assert Path(result.output_model_path).read_text(encoding="utf-8") == "model"
        assert "trained" in (tmp_path / "run.log").read_text(encoding="utf-8")
        assert tree_digest(dataset) == digest_before  # trainer never mutates the dataset

    def test_nonzero_exit_raises(self, tmp_path):
        manifest = _manifest(tmp_path, tmp_path / "ds")
        template = f"{sys.executable} -c import_sys_that_fails {{manifest}} {{dataset_dir}} {{output}}"
        with pytest.raises(TrainerFailed):
            invoke_trainer(manifest, tmp_path / "m.cfg", template, log_path=tmp_path / "t.log")


class TestBundledStubTrainer:
    def test_trains_brightness_model(self, tmp_path):
        from qzlora.stubtrainer import main as stub_main

        dataset = tmp_path / "ds"
        dataset.mkdir()
        for i, b in enumerate([0.2, 0.4, 0.6]):
            (dataset / f"{i:03d}_x.png").write_bytes(make_png(b, side=16))
            (dataset / f"{i:03d}_x.txt").write_text("c", encoding="utf-8")
        manifest = _manifest(tmp_path, dataset)
        manifest_path = write_manifest(manifest, tmp_path / "m.cfg")
        code = stub_main(["--manifest", str(manifest_path), "--dataset", str(dataset),
                          "--output", str(tmp_path / "model.safetensors")])
        assert code == 0
        import json

        model = json.loads((tmp_path / "model.safetensors").read_text(encoding="utf-8"))
        assert model["image_count"] == 3
        assert abs(model["brightness"] - 0.4) < 0.02

    def test_count_mismatch_fails(self, tmp_path):
        from qzlora.stubtrainer import main as stub_main

        dataset = tmp_path / "ds"
        dataset.mkdir()
        (dataset / "000_x.png").write_bytes(make_png(0.5, side=16))
        manifest = _manifest(tmp_path, dataset)
        manifest_path = write_manifest(manifest, tmp_path / "m.cfg")
        code = stub_main(["--manifest", str(manifest_path), "--dataset", str(dataset),
                          "--output", str(tmp_path / "model.safetensors")])
        assert code == 2
