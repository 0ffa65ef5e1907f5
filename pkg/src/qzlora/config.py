"""Pipeline configuration: a single TOML file plus environment variables for
secrets (TEXT_API_KEY / VISION_API_KEY are read only at call time and never
written to disk or logs)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from .errors import ConfigError
from .selection import Condition, KIND_QZLORA_TOP, parse_condition_label

PROVIDER_MODES = ("mock", "http")
SOURCE_KINDS = ("local", "commons")

DEFAULT_CONDITIONS = (
    "no-lora/realistic",
    "lora-random-15/realistic",
    "qzlora-top-2/realistic",
    "qzlora-top-5/realistic",
    "qzlora-top-10/realistic",
    "qzlora-top-12/realistic",
    "qzlora-top-15/realistic",
    "no-lora/illustration",
    "qzlora-top-15/illustration",
    "real-random-5/realistic",
    "real-top-5/realistic",
)


@dataclass(frozen=True)
class PipelineConfig:
    registry_path: Path
    store_root: Path
    source_kind: str = "local"
    source_root: Path | None = None
    commons_api_url: str = "https://commons.wikimedia.org/w/api.php"
    provider_mode: str = "mock"
    text_endpoint: str = ""
    text_model: str = "mock-text"
    vision_endpoint: str = ""
    vision_model: str = "mock-vision"
    image_backend: str = "stub"  # "stub" or an http(s) endpoint
    backend_model_tag: str = "stub-diffusion"
    fixture_dir: Path | None = None  # fixture-backed text provider when set
    trainer_template: str = (
        "qzlora-stub-trainer --manifest {manifest} --dataset {dataset_dir} --output {output}"
    )
    deterministic: bool = True
    seed: int = 0
    question_count: int = 10
    option_count: int = 4
    samples_per_condition: int = 5
    ks: tuple[int, ...] = (2, 5, 10, 12, 15)
    ksweep_subset_size: int = 20
    conditions: tuple[Condition, ...] = field(
        default_factory=lambda: tuple(parse_condition_label(c) for c in DEFAULT_CONDITIONS)
    )
    parallelism_score: int = 8
    parallelism_fetch: int = 4
    fetch_cap: int = 55
    enforce_eligibility: bool = False
    generation_templates: Path | None = None
    quiz_templates: Path | None = None
    dry_run: bool = False


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def validate_config(cfg: PipelineConfig) -> PipelineConfig:
    _require(cfg.provider_mode in PROVIDER_MODES, f"provider mode must be one of {PROVIDER_MODES}")
    _require(cfg.source_kind in SOURCE_KINDS, f"source kind must be one of {SOURCE_KINDS}")
    _require(cfg.registry_path.exists(), f"registry not found: {cfg.registry_path}")
    if cfg.source_kind == "local":
        _require(cfg.source_root is not None and cfg.source_root.is_dir(),
                 f"local source directory not found: {cfg.source_root}")
    if cfg.provider_mode == "http":
        for name, endpoint in (("text", cfg.text_endpoint), ("vision", cfg.vision_endpoint)):
            _require(endpoint.startswith(("http://", "https://")),
                     f"{name} endpoint must be an http(s) URL in http mode, got {endpoint!r}")
    if cfg.image_backend != "stub":
        _require(cfg.image_backend.startswith(("http://", "https://")),
                 f"image backend must be 'stub' or an http(s) URL, got {cfg.image_backend!r}")
    _require(cfg.parallelism_score >= 1, "parallelism_score must be >= 1")
    _require(cfg.parallelism_fetch >= 1, "parallelism_fetch must be >= 1")
    _require(cfg.fetch_cap >= 1, "fetch_cap must be >= 1")
    _require(1 <= cfg.question_count <= 30, "question_count must be in 1..30")
    _require(2 <= cfg.option_count <= 6, "option_count must be in 2..6")
    _require(cfg.samples_per_condition >= 1, "samples_per_condition must be >= 1")
    _require(len(cfg.ks) > 0, "ks must be nonempty")
    _require(list(cfg.ks) == sorted(set(cfg.ks)), "ks must be strictly ascending")
    _require(all(k >= 1 for k in cfg.ks), "every k must be >= 1")
    _require(cfg.ksweep_subset_size >= 1, "ksweep_subset_size must be >= 1")
    _require(len(cfg.conditions) > 0, "conditions must be nonempty")
    labels = [c.label for c in cfg.conditions]
    _require(len(set(labels)) == len(labels), "duplicate condition labels")
    sweep_labels = {f"{KIND_QZLORA_TOP}-{k}/realistic" for k in cfg.ks}
    missing = sorted(sweep_labels - set(labels))
    _require(not missing, f"ks requires conditions {missing} for the k-sweep")
    for path in (cfg.generation_templates, cfg.quiz_templates, cfg.fixture_dir):
        if path is not None:
            _require(Path(path).exists(), f"configured path not found: {path}")
    return cfg


def load_config(path: Path, *, dry_run: bool = False, seed: int | None = None) -> PipelineConfig:
    """Parse and validate the TOML config; relative paths resolve against the
    config file's directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    base = path.parent

    def _path(value: str | None) -> Path | None:
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else (base / p)

    paths = data.get("paths", {})
    source = data.get("source", {})
    providers = data.get("providers", {})
    trainer = data.get("trainer", {})
    pipeline = data.get("pipeline", {})
    templates = data.get("templates", {})

    try:
        conditions = tuple(
            parse_condition_label(label)
            for label in pipeline.get("conditions", list(DEFAULT_CONDITIONS))
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    cfg = PipelineConfig(
        registry_path=_path(paths.get("registry", "registry.json")),
        store_root=_path(paths.get("store_root", "store")),
        source_kind=source.get("kind", "local"),
        source_root=_path(source.get("root")),
        commons_api_url=source.get("api_url", "https://commons.wikimedia.org/w/api.php"),
        provider_mode=providers.get("mode", "mock"),
        text_endpoint=providers.get("text_endpoint", ""),
        text_model=providers.get("text_model", "mock-text"),
        vision_endpoint=providers.get("vision_endpoint", ""),
        vision_model=providers.get("vision_model", "mock-vision"),
        image_backend=providers.get("image_backend", "stub"),
        backend_model_tag=providers.get("backend_model_tag", "stub-diffusion"),
        fixture_dir=_path(providers.get("fixture_dir")),
        trainer_template=trainer.get("command_template", PipelineConfig.trainer_template),
        deterministic=bool(pipeline.get("deterministic", True)),
        seed=int(seed if seed is not None else pipeline.get("seed", 0)),
        question_count=int(pipeline.get("question_count", 10)),
        option_count=int(pipeline.get("option_count", 4)),
        samples_per_condition=int(pipeline.get("samples_per_condition", 5)),
        ks=tuple(int(k) for k in pipeline.get("ks", [2, 5, 10, 12, 15])),
        ksweep_subset_size=int(pipeline.get("ksweep_subset_size", 20)),
        conditions=conditions,
        parallelism_score=int(pipeline.get("parallelism_score", 8)),
        parallelism_fetch=int(pipeline.get("parallelism_fetch", 4)),
        fetch_cap=int(pipeline.get("fetch_cap", 55)),
        enforce_eligibility=bool(pipeline.get("enforce_eligibility", False)),
        generation_templates=_path(templates.get("generation")),
        quiz_templates=_path(templates.get("quiz")),
        dry_run=dry_run,
    )
    return validate_config(cfg)
