"""Staged pipeline executor with persisted, digest-verified run state.

Stage DAG: ingest -> quiz -> score -> select -> manifest -> train ->
generate -> evaluate -> report. Only pending or failed units execute; a unit
is `done` only while its recorded output digests still verify on disk, so a
tampered or missing artifact re-queues the unit instead of being trusted.
"""

from __future__ import annotations

import hashlib
import logging
import threading
from pathlib import Path
from typing import Callable

from . import generation, report, training
from .config import PipelineConfig
from .errors import ConfigError, InvalidTopic, UpstreamIncomplete
from .ingest import (
    LocalDirectorySource,
    WikimediaCommonsSource,
    fetch_candidates,
    image_bytes,
    load_corpus,
)
from .providers import (
    FixtureTextProvider,
    HttpTextProvider,
    HttpVisionProvider,
    LuminanceKeyedVision,
    SyntheticTextProvider,
)
from .quizgen import generate_quiz, load_quiz, load_quiz_templates
from .rng import derive_seed
from .scoring import ScoreStore, ScoreSubject, format_question_prompt, score_batch
from .selection import (
    Condition,
    RANDOM_KINDS,
    TOP_K_KINDS,
    load_selection,
    rank,
    save_selection,
    select_random_k,
    select_top_k,
)
from .storage import read_json, sha256_hex, tree_digest, write_json
from .topics import Topic, check_eligibility, load_registry

log = logging.getLogger(__name__)

STAGES = ("ingest", "quiz", "score", "select", "manifest", "train", "generate", "evaluate", "report")

PINNED_TIMESTAMP = "1970-01-01T00:00:00Z"

STATUS_DONE = "done"
STATUS_FAILED = "failed"
STATUS_DRY_RUN = "dry-run"


class RunState:
    """Persisted per-unit status with content digests of stage outputs."""

    def __init__(self, path: Path, run_id: str):
        self.path = Path(path)
        self.run_id = run_id
        self._lock = threading.Lock()
        self._units: dict[str, dict] = {}
        if self.path.exists():
            raw = read_json(self.path)
            if raw.get("run_id") == run_id:
                self._units = raw.get("units", {})

    def _save(self) -> None:
        write_json(self.path, {"run_id": self.run_id, "units": self._units})

    def mark_done(self, key: str, outputs: dict[str, str]) -> None:
        with self._lock:
            self._units[key] = {"status": STATUS_DONE, "outputs": outputs}
            self._save()

    def mark_failed(self, key: str, reason: str) -> None:
        with self._lock:
            self._units[key] = {"status": STATUS_FAILED, "reason": reason}
            self._save()

    def is_done(self, key: str, store_root: Path) -> bool:
        unit = self._units.get(key)
        if not unit or unit.get("status") != STATUS_DONE:
            return False
        for rel, digest in unit.get("outputs", {}).items():
            path = Path(store_root) / rel
            if path.is_dir():
                if tree_digest(path) != digest:
                    return False
            elif not path.is_file() or sha256_hex(path.read_bytes()) != digest:
                return False
        return True

    def status(self, key: str) -> str | None:
        unit = self._units.get(key)
        return unit.get("status") if unit else None


def _digest_outputs(store_root: Path, paths: list[Path]) -> dict[str, str]:
    outputs = {}
    for path in paths:
        rel = str(Path(path).relative_to(store_root))
        if Path(path).is_dir():
            outputs[rel] = tree_digest(path)
        else:
            outputs[rel] = sha256_hex(Path(path).read_bytes())
    return outputs


def _train_targets(conditions: tuple[Condition, ...]) -> dict[str, Condition]:
    """Style-independent training targets: one model per (kind, k).

    Both style variants of a condition share training data, so only one
    manifest/train unit exists per (kind, k); generation applies the style.
    """
    targets: dict[str, Condition] = {}
    for condition in conditions:
        if not condition.trains:
            continue
        key = f"{condition.kind}-{condition.k}"
        if key not in targets or condition.style == "realistic":
            targets[key] = condition
    return targets


def _selection_seed_key(condition: Condition) -> str:
    # Style variants share one selection so one trained model serves both.
    return f"{condition.kind}-{condition.k}"


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.store_root = Path(cfg.store_root)
        self.store_root.mkdir(parents=True, exist_ok=True)
        self.registry = load_registry(cfg.registry_path)
        if not self.registry:
            raise ConfigError(f"registry {cfg.registry_path} has no topics")
        self.state = RunState(self.store_root / "runstate.json", self._run_id())
        self.score_store = ScoreStore(self.store_root)
        self._text_provider = None
        self._vision_provider = None
        self._backend = None
        self._session = None

    def _run_id(self) -> str:
        h = hashlib.sha256()
        h.update("|".join(sorted(self.registry)).encode())
        h.update("|".join(c.label for c in self.cfg.conditions).encode())
        h.update(str(self.cfg.seed).encode())
        return h.hexdigest()[:16]

    # --- provider/backends ----------------------------------------------

    def _http_session(self):
        if self._session is None:
            import requests

            self._session = requests.Session()
        return self._session

    def text_provider(self):
        if self._text_provider is None:
            if self.cfg.provider_mode == "mock":
                if self.cfg.fixture_dir is not None:
                    self._text_provider = FixtureTextProvider(self.cfg.fixture_dir)
                else:
                    self._text_provider = SyntheticTextProvider()
            else:
                self._text_provider = HttpTextProvider(self.cfg.text_endpoint, self._http_session())
        return self._text_provider

    def vision_provider(self):
        if self._vision_provider is None:
            if self.cfg.provider_mode == "mock":
                self._vision_provider = LuminanceKeyedVision()
            else:
                self._vision_provider = HttpVisionProvider(self.cfg.vision_endpoint, self._http_session())
        return self._vision_provider

    def image_backend(self):
        if self._backend is None:
            if self.cfg.image_backend == "stub":
                self._backend = generation.StubImageBackend(model_tag=self.cfg.backend_model_tag)
            else:
                self._backend = generation.HttpImageBackend(self.cfg.image_backend, self._http_session())
        return self._backend

    def _register_quiz_with_mock(self, quiz) -> None:
        provider = self.vision_provider()
        register = getattr(provider, "register_question", None)
        if register is None:
            return
        for question in quiz.questions:
            register(format_question_prompt(question), question.correct_index, len(question.options))

    def _timestamp(self) -> str | None:
        return PINNED_TIMESTAMP if self.cfg.deterministic else None

    # --- scope / unit enumeration -----------------------------------------

    def topics_in_scope(self, scope: list[str] | None) -> list[Topic]:
        if scope:
            unknown = sorted(set(scope) - set(self.registry))
            if unknown:
                raise ConfigError(f"scoped topics not in registry: {unknown}")
            ids = sorted(set(scope))
        else:
            ids = sorted(self.registry)
        return [self.registry[tid] for tid in ids]

    def _unit_keys(self, stage: str, topics: list[Topic]) -> list[str]:
        if stage == "report":
            return ["report:*"]
        keys = []
        for topic in topics:
            if stage in ("ingest", "quiz", "score", "select"):
                keys.append(f"{stage}:{topic.topic_id}")
            elif stage in ("manifest", "train"):
                keys.extend(
                    f"{stage}:{topic.topic_id}:{key}"
                    for key in sorted(_train_targets(self.cfg.conditions))
                )
            elif stage == "generate":
                keys.extend(
                    f"{stage}:{topic.topic_id}:{c.label}"
                    for c in self.cfg.conditions if c.generates
                )
            elif stage == "evaluate":
                keys.extend(f"{stage}:{topic.topic_id}:{c.label}" for c in self.cfg.conditions)
        return keys

    def _check_upstream(self, stage: str, topics: list[Topic]) -> None:
        index = STAGES.index(stage)
        if index == 0:
            return
        upstream = list(STAGES[:index])
        if stage == "generate" and self.cfg.dry_run and "train" in upstream:
            upstream.remove("train")
        check_topics = self.topics_in_scope(None) if stage == "report" else topics
        for prior in upstream:
            for key in self._unit_keys(prior, check_topics):
                if not self.state.is_done(key, self.store_root):
                    raise UpstreamIncomplete(f"{stage} requires {key} to be done first")

    # --- stage execution ----------------------------------------------------

    def run_stage(self, stage: str, scope: list[str] | None = None) -> dict[str, str]:
        """Execute pending/failed units of one stage; returns unit -> status."""
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
        topics = self.topics_in_scope(scope)
        self._check_upstream(stage, topics)
        delta: dict[str, str] = {}
        for key in self._unit_keys(stage, topics):
            if self.state.is_done(key, self.store_root):
                delta[key] = STATUS_DONE
                continue
            runner = self._runner_for(key)
            try:
                outputs = runner()
            except Exception as exc:
                log.error("unit %s failed: %s", key, exc)
                self.state.mark_failed(key, f"{type(exc).__name__}: {exc}")
                delta[key] = STATUS_FAILED
                continue
            if outputs is None:
                delta[key] = STATUS_DRY_RUN
            else:
                self.state.mark_done(key, _digest_outputs(self.store_root, outputs))
                delta[key] = STATUS_DONE
        return delta

    def run_all(self, scope: list[str] | None = None) -> dict[str, str]:
        """All stages in dependency order; stops after a stage with failures."""
        combined: dict[str, str] = {}
        for stage in STAGES:
            delta = self.run_stage(stage, scope)
            combined.update(delta)
            if any(status == STATUS_FAILED for status in delta.values()):
                break
            if self.cfg.dry_run and stage == "train":
                # Dry-run validated the remaining stages cannot execute.
                break
        return combined

    def _runner_for(self, key: str) -> Callable[[], list[Path] | None]:
        parts = key.split(":")
        stage = parts[0]
        if stage == "report":
            return self._report_unit
        topic = self.registry[parts[1]]
        if stage == "ingest":
            return lambda: self._ingest_unit(topic)
        if stage == "quiz":
            return lambda: self._quiz_unit(topic)
        if stage == "score":
            return lambda: self._score_unit(topic)
        if stage == "select":
            return lambda: self._select_unit(topic)
        if stage == "manifest":
            return lambda: self._manifest_unit(topic, parts[2])
        if stage == "train":
            return lambda: self._train_unit(topic, parts[2])
        if stage == "generate":
            from .selection import parse_condition_label

            return lambda: self._generate_unit(topic, parse_condition_label(parts[2]))
        if stage == "evaluate":
            from .selection import parse_condition_label

            return lambda: self._evaluate_unit(topic, parse_condition_label(parts[2]))
        raise ConfigError(f"unknown unit {key}")

    # --- units ----------------------------------------------------------------

    def _source(self):
        if self.cfg.source_kind == "local":
            return LocalDirectorySource(self.cfg.source_root)
        return WikimediaCommonsSource(self.cfg.commons_api_url, self._http_session())

    def _ingest_unit(self, topic: Topic) -> list[Path]:
        source = self._source()
        listing = source.list_entries(topic)
        verdict = check_eligibility(topic, len(listing))
        if not verdict.eligible:
            log.warning("topic %s ineligible: %s", topic.topic_id, ", ".join(verdict.reasons))
            if self.cfg.enforce_eligibility:
                raise InvalidTopic(f"{topic.topic_id} ineligible: {', '.join(verdict.reasons)}")
        fetch_candidates(topic, source, self.store_root,
                         cap=self.cfg.fetch_cap, parallelism=self.cfg.parallelism_fetch)
        return [self.store_root / "corpus" / topic.topic_id / "manifest.json"]

    def _quiz_unit(self, topic: Topic) -> list[Path]:
        distractors = [
            (tid, self.registry[tid].summary_sentence)
            for tid in topic.distractor_ids if tid in self.registry
        ]
        skipped = [tid for tid in topic.distractor_ids if tid not in self.registry]
        if skipped:
            log.warning("topic %s: distractors not registered, skipped: %s", topic.topic_id, skipped)
        system_template, user_template = load_quiz_templates(self.cfg.quiz_templates)
        quiz = generate_quiz(
            topic, distractors, self.cfg.question_count, self.text_provider(),
            model_id=self.cfg.text_model, option_count=self.cfg.option_count,
            system_template=system_template, user_template=user_template,
            store_root=self.store_root, created_at=self._timestamp(),
        )
        from .quizgen import quiz_path

        return [quiz_path(self.store_root, topic.topic_id, quiz.quiz_id)]

    def _score_unit(self, topic: Topic) -> list[Path]:
        quiz = load_quiz(self.store_root, topic.topic_id)
        self._register_quiz_with_mock(quiz)
        corpus = [c for c in load_corpus(self.store_root, topic.topic_id) if not c.corrupt]
        subjects = [
            ScoreSubject(c.image_id, image_bytes(self.store_root, topic.topic_id, c.image_id))
            for c in corpus
        ]
        items = score_batch(
            subjects, quiz, self.vision_provider(),
            parallelism=self.cfg.parallelism_score, model_id=self.cfg.vision_model,
            store=self.score_store, scored_at=self._timestamp(),
        )
        errors = [f"{item.subject_id}: {item.error}" for item in items if item.error]
        if errors:
            raise RuntimeError(f"{len(errors)} subjects failed: " + "; ".join(errors[:3]))
        paths = [
            self.score_store.record_path(item.record.subject_hash, quiz.quiz_id, self.cfg.vision_model)
            for item in items if item.record is not None
        ]
        return paths

    def _select_unit(self, topic: Topic) -> list[Path]:
        quiz = load_quiz(self.store_root, topic.topic_id)
        corpus = load_corpus(self.store_root, topic.topic_id)
        usable = {c.image_id for c in corpus if not c.corrupt}
        records = [
            r for r in self.score_store.records_for_quiz(quiz.quiz_id, self.cfg.vision_model)
            if r.subject_id in usable
        ]
        ranking = rank(records)
        paths = []
        for condition in self.cfg.conditions:
            if not condition.selects:
                continue
            if condition.kind in TOP_K_KINDS:
                selection = select_top_k(
                    ranking, condition.k,
                    topic_id=topic.topic_id, condition=condition, source_quiz_id=quiz.quiz_id,
                )
            elif condition.kind in RANDOM_KINDS:
                seed = derive_seed("select", self.cfg.seed, topic.topic_id,
                                   _selection_seed_key(condition))
                selection = select_random_k(
                    corpus, condition.k, seed, topic_id=topic.topic_id, condition=condition,
                )
            else:
                continue
            paths.append(save_selection(self.store_root, selection))
        return paths

    def _paths_for_target(self, topic: Topic, target_key: str) -> dict[str, Path]:
        return {
            "dataset": self.store_root / "datasets" / topic.topic_id / target_key,
            "manifest": self.store_root / "manifests" / topic.topic_id / f"{target_key}.cfg",
            "model": self.store_root / "models" / topic.topic_id / f"{target_key}.safetensors",
            "log": self.store_root / "runs" / topic.topic_id / f"{target_key}.log",
        }

    def _manifest_unit(self, topic: Topic, target_key: str) -> list[Path]:
        condition = _train_targets(self.cfg.conditions)[target_key]
        selection = load_selection(self.store_root, topic.topic_id, condition)
        paths = self._paths_for_target(topic, target_key)
        dataset_dir = training.emit_dataset(selection, self.store_root, topic, paths["dataset"])
        manifest = training.emit_manifest(selection, dataset_dir, paths["model"])
        training.write_manifest(manifest, paths["manifest"])
        return [paths["manifest"], dataset_dir]

    def _train_unit(self, topic: Topic, target_key: str) -> list[Path] | None:
        paths = self._paths_for_target(topic, target_key)
        manifest = training.parse_manifest(paths["manifest"].read_text(encoding="utf-8"))
        result = training.invoke_trainer(
            manifest, paths["manifest"], self.cfg.trainer_template,
            log_path=paths["log"], dry_run=self.cfg.dry_run,
        )
        if self.cfg.dry_run:
            log.info("dry-run trainer command: %s", result.command)
            return None
        return [Path(result.output_model_path)]

    def _generate_unit(self, topic: Topic, condition: Condition) -> list[Path] | None:
        template_set = generation.load_template_set(self.cfg.generation_templates)
        prompts = generation.build_prompts(topic, condition.style, template_set)
        if self.cfg.dry_run:
            log.info("dry-run prompts for %s/%s built", topic.topic_id, condition.label)
            return None
        lora_tag = None
        if condition.trains:
            target_key = f"{condition.kind}-{condition.k}"
            lora_tag = str(self._paths_for_target(topic, target_key)["model"])
        generation.generate_samples(
            topic, condition, prompts, self.image_backend(),
            n=self.cfg.samples_per_condition, lora_tag=lora_tag, store_root=self.store_root,
        )
        out_dir = generation.generation_dir(self.store_root, topic.topic_id, condition)
        return [out_dir]

    def _evaluate_unit(self, topic: Topic, condition: Condition) -> list[Path]:
        quiz = load_quiz(self.store_root, topic.topic_id)
        self._register_quiz_with_mock(quiz)
        if condition.generates:
            records = generation.load_generated(self.store_root, topic.topic_id, condition)
            subjects = [
                ScoreSubject(r.gen_id, generation.generated_image_bytes(self.store_root, r, condition))
                for r in sorted(records, key=lambda r: r.sample_index)
            ]
            items = score_batch(
                subjects, quiz, self.vision_provider(),
                parallelism=self.cfg.parallelism_score, model_id=self.cfg.vision_model,
                store=self.score_store, scored_at=self._timestamp(),
            )
            errors = [item.error for item in items if item.error]
            if errors:
                raise RuntimeError(f"evaluation failed: {errors[:3]}")
            per_sample = [item.record.accuracy for item in items]
        else:
            selection = load_selection(self.store_root, topic.topic_id, condition)
            hash_by_id = {
                c.image_id: c.content_hash for c in load_corpus(self.store_root, topic.topic_id)
            }
            per_sample = []
            for image_id in selection.image_ids:
                record = self.score_store.get(hash_by_id[image_id], quiz.quiz_id, self.cfg.vision_model)
                if record is None:
                    raise UpstreamIncomplete(f"no cached score for {image_id}")
                per_sample.append(record.accuracy)
        path = report.eval_path(self.store_root, topic.topic_id, condition)
        write_json(path, {
            "topic_id": topic.topic_id,
            "condition": condition.label,
            "per_sample_accuracies": per_sample,
            "mean_accuracy": sum(per_sample) / len(per_sample),
        })
        return [path]

    def _report_unit(self) -> list[Path]:
        outputs = report.build_report(self.cfg, self.topics_in_scope(None))
        return list(outputs.values())
