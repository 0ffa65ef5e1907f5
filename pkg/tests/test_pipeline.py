from __future__ import annotations

from pathlib import Path

import pytest

from qzlora.config import load_config
from qzlora.errors import ConfigError, UpstreamIncomplete
from qzlora.fixtures import make_demo_workspace
from qzlora.pipeline import Pipeline
from qzlora.storage import read_json


@pytest.fixture(scope="module")
def demo_cfg_path(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("demo")
    return make_demo_workspace(root, images_per_topic=6)


SMALL_CONDITIONS = ["no-lora/realistic", "qzlora-top-2/realistic",
                    "lora-random-3/realistic", "real-top-2/realistic"]


@pytest.fixture(scope="module")
def small_cfg_path(tmp_path_factory) -> Path:
    # Narrow condition set keeps per-test pipelines quick.
    root = tmp_path_factory.mktemp("small")
    return make_demo_workspace(root, topic_count=2, images_per_topic=6,
                               conditions=SMALL_CONDITIONS, ks=[2],
                               question_count=5, samples_per_condition=2)


class TestConfig:
    def test_demo_config_loads(self, demo_cfg_path):
        cfg = load_config(demo_cfg_path)
        assert cfg.provider_mode == "mock"
        assert cfg.ks == (2, 5, 10, 12, 15)

    def test_missing_registry_fails_fast(self, tmp_path):
        bad = tmp_path / "config.toml"
        bad.write_text('[paths]\nregistry = "nope.json"\n', encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_http_mode_requires_endpoints(self, demo_cfg_path, tmp_path):
        text = demo_cfg_path.read_text(encoding="utf-8").replace('mode = "mock"', 'mode = "http"')
        bad = tmp_path / "config.toml"
        bad.write_text(text, encoding="utf-8")
        with pytest.raises(ConfigError, match="endpoint"):
            load_config(bad)

    def test_ks_must_have_matching_conditions(self, small_cfg_path, tmp_path):
        text = small_cfg_path.read_text(encoding="utf-8").replace("ks = [2]", "ks = [2, 7]")
        bad = tmp_path / "config.toml"
        bad.write_text(text, encoding="utf-8")
        with pytest.raises(ConfigError, match="qzlora-top-7"):
            load_config(bad)

    def test_unknown_condition_label(self, small_cfg_path, tmp_path):
        text = small_cfg_path.read_text(encoding="utf-8").replace(
            '"no-lora/realistic"', '"warp-drive-9/realistic"')
        bad = tmp_path / "config.toml"
        bad.write_text(text, encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(bad)


class TestStageOrdering:
    def test_score_before_quiz_is_upstream_incomplete(self, small_cfg_path, tmp_path):
        cfg = load_config(small_cfg_path)
        from dataclasses import replace

        cfg = replace(cfg, store_root=tmp_path / "store")
        pipeline = Pipeline(cfg)
        pipeline.run_stage("ingest")
        with pytest.raises(UpstreamIncomplete):
            pipeline.run_stage("score")

    def test_unknown_stage_rejected(self, small_cfg_path):
        pipeline = Pipeline(load_config(small_cfg_path))
        with pytest.raises(ConfigError):
            pipeline.run_stage("polish")

    def test_unknown_scope_topic_rejected(self, small_cfg_path):
        pipeline = Pipeline(load_config(small_cfg_path))
        with pytest.raises(ConfigError):
            pipeline.run_stage("ingest", scope=["not-a-topic"])


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg_path = make_demo_workspace(root, topic_count=2, images_per_topic=6,
                                   conditions=SMALL_CONDITIONS, ks=[2],
                                   question_count=5, samples_per_condition=2)
    cfg = load_config(cfg_path)
    pipeline = Pipeline(cfg)
    delta = pipeline.run_all()
    return cfg, pipeline, delta


class TestFullRunAndResume:
    def test_all_units_done(self, finished):
        _, _, delta = finished
        assert delta
        assert set(delta.values()) == {"done"}

    def test_report_files_exist_with_configured_conditions(self, finished):
        cfg, _, _ = finished
        stats = read_json(Path(cfg.store_root) / "report" / "stats.json")
        assert stats["conditions"] == [c.label for c in cfg.conditions]
        assert sorted(stats["topics"]) == stats["topics"]
        assert set(stats["per_topic"]) == set(stats["topics"])
        for name in ("boxplot_stats.csv", "net_advantage.csv", "k_sweep.csv", "correlations.csv"):
            assert (Path(cfg.store_root) / "report" / name).exists()

    def test_rerun_is_zero_work_and_identical(self, finished):
        cfg, pipeline, _ = finished
        stats_path = Path(cfg.store_root) / "report" / "stats.json"
        before = stats_path.read_bytes()
        text_calls_before = getattr(pipeline.text_provider(), "call_log", [])
        n_before = len(text_calls_before)
        delta = pipeline.run_all()
        assert set(delta.values()) == {"done"}
        assert len(getattr(pipeline.text_provider(), "call_log", [])) == n_before
        assert stats_path.read_bytes() == before

    def test_resume_from_fresh_process_skips_providers(self, finished):
        cfg, _, _ = finished
        resumed = Pipeline(cfg)  # new process analog: fresh state object
        delta = resumed.run_all()
        assert set(delta.values()) == {"done"}
        # The synthetic text provider was never consulted on resume.
        assert getattr(resumed.text_provider(), "call_log", None) in ([], None) or \
            len(resumed.text_provider().call_log) == 0

    def test_interrupted_midway_resumes(self, tmp_path, finished):
        cfg, _, _ = finished
        from dataclasses import replace

        cfg2 = replace(cfg, store_root=tmp_path / "store2")
        first = Pipeline(cfg2)
        for stage in ("ingest", "quiz", "score"):
            delta = first.run_stage(stage)
            assert "failed" not in delta.values()
        # Fresh pipeline picks up after `score` without recalling the VLM.
        second = Pipeline(cfg2)
        delta = second.run_all()
        assert set(delta.values()) == {"done"}
        vision = second.vision_provider()
        # Corpus scoring was cached; only the generated images needed calls:
        # 2 topics x 3 generating conditions x 2 samples x 5 questions.
        assert vision.call_count == 2 * 3 * 2 * 5

    def test_tampered_output_reruns_unit(self, finished):
        cfg, pipeline, _ = finished
        store = Path(cfg.store_root)
        victim = store / "report" / "stats.json"
        original = victim.read_bytes()
        victim.write_bytes(b"{}\n")
        delta = pipeline.run_stage("report")
        assert delta["report:*"] == "done"
        assert victim.read_bytes() == original


class TestDryRun:
    def test_dry_run_train_does_not_produce_models(self, tmp_path):
        cfg_path = make_demo_workspace(
            tmp_path, topic_count=1, images_per_topic=6,
            conditions=["no-lora/realistic", "qzlora-top-2/realistic"], ks=[2],
            question_count=4, samples_per_condition=2)
        cfg = load_config(cfg_path, dry_run=True)
        pipeline = Pipeline(cfg)
        delta = pipeline.run_all()
        assert delta["train:harlequin-finch:qzlora-top-2"] == "dry-run"
        assert not (Path(cfg.store_root) / "models").exists() or \
            not list((Path(cfg.store_root) / "models").rglob("*.safetensors"))
        # Nothing past train executed.
        assert not any(k.startswith("generate:") and v == "done" for k, v in delta.items())
