"""Final report assembly: stats.json plus one flat CSV per analysis
(condition boxplot stats, net-advantage matrix, k-sweep, correlations).

Accuracies stay fractions in [0, 1] everywhere; rendering to percentages is
left to downstream plotting tools. Output bytes are deterministic: sorted
topics, config condition order, repr()-formatted floats, no timestamps.
"""

from __future__ import annotations

import io
from pathlib import Path

from .config import PipelineConfig
from .errors import DegenerateInput, UpstreamIncomplete
from .ingest import load_corpus
from .quizgen import load_quiz
from .rng import derive_seed
from .scoring import ScoreStore
from .selection import Condition, KIND_NO_LORA, KIND_QZLORA_TOP, load_selection
from .stats import (
    aggregate_condition,
    choose_sweep_subset,
    correlate,
    k_sweep,
    net_advantage,
    popularity_correlation,
    quantile,
)
from .storage import atomic_write_text, read_json
from .topics import Topic


def eval_path(store_root: Path, topic_id: str, condition: Condition) -> Path:
    return Path(store_root) / "eval" / topic_id / f"{condition.label}.json"


def load_eval(store_root: Path, topic_id: str, condition: Condition) -> dict:
    path = eval_path(store_root, topic_id, condition)
    if not path.exists():
        raise UpstreamIncomplete(f"no evaluation for {topic_id} / {condition.label}")
    return read_json(path)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_line(*cells) -> str:
    return ",".join(_fmt(c) for c in cells) + "\n"


def _correlation_dict(result) -> dict:
    return {
        "r": result.r,
        "r_squared": result.r_squared,
        "slope": result.slope,
        "intercept": result.intercept,
        "n": result.n,
        "p_value": result.p_value,
    }


def build_report(cfg: PipelineConfig, topics: list[Topic]) -> dict[str, Path]:
    store_root = Path(cfg.store_root)
    report_dir = store_root / "report"
    topic_ids = sorted(t.topic_id for t in topics)
    labels = [c.label for c in cfg.conditions]

    per_topic: dict[str, dict[str, dict]] = {}
    for topic_id in topic_ids:
        per_topic[topic_id] = {}
        for condition in cfg.conditions:
            per_topic[topic_id][condition.label] = load_eval(store_root, topic_id, condition)

    mean_table = {
        topic_id: {label: entry["mean_accuracy"] for label, entry in row.items()}
        for topic_id, row in per_topic.items()
    }
    groups = {label: [mean_table[t][label] for t in topic_ids] for label in labels}
    aggregates = aggregate_condition(groups)
    matrix = net_advantage(mean_table, labels)

    subset = choose_sweep_subset(topic_ids, cfg.ksweep_subset_size,
                                 derive_seed("ksweep-subset", cfg.seed))
    sweep_table = {
        topic_id: {
            k: mean_table[topic_id][f"{KIND_QZLORA_TOP}-{k}/realistic"]
            for k in cfg.ks
            if f"{KIND_QZLORA_TOP}-{k}/realistic" in mean_table[topic_id]
        }
        for topic_id in topic_ids
    }
    sweep_points = k_sweep(sweep_table, cfg.ks, subset=subset)

    # Input-vs-output accuracy per k: mean quiz score of the selected training
    # images against the mean score of the images generated from them.
    store = ScoreStore(store_root)
    input_output: dict[str, dict] = {}
    for k in cfg.ks:
        label = f"{KIND_QZLORA_TOP}-{k}/realistic"
        condition = next(c for c in cfg.conditions if c.label == label)
        xs, ys = [], []
        for topic_id in topic_ids:
            selection = load_selection(store_root, topic_id, condition)
            quiz = load_quiz(store_root, topic_id, selection.source_quiz_id)
            hash_by_id = {c.image_id: c.content_hash for c in load_corpus(store_root, topic_id)}
            accuracies = []
            for image_id in selection.image_ids:
                record = store.get(hash_by_id[image_id], quiz.quiz_id, cfg.vision_model)
                if record is None:
                    raise UpstreamIncomplete(f"no corpus score for {image_id}")
                accuracies.append(record.accuracy)
            xs.append(sum(accuracies) / len(accuracies))
            ys.append(mean_table[topic_id][label])
        try:
            input_output[str(k)] = _correlation_dict(correlate(xs, ys))
        except DegenerateInput as exc:
            input_output[str(k)] = {"error": f"DegenerateInput: {exc}"}

    baseline_label = f"{KIND_NO_LORA}/realistic"
    popularity: dict
    if baseline_label in labels:
        counts = [sum(1 for c in load_corpus(store_root, t) if not c.corrupt) for t in topic_ids]
        baselines = [mean_table[t][baseline_label] for t in topic_ids]
        try:
            popularity = _correlation_dict(popularity_correlation(baselines, counts))
        except DegenerateInput as exc:
            popularity = {"error": f"DegenerateInput: {exc}"}
    else:
        popularity = {"error": "no no-lora/realistic condition configured"}

    stats = {
        "topics": topic_ids,
        "conditions": labels,
        "condition_stats": {
            label: {
                "mean": agg.mean, "median": agg.median, "std": agg.std,
                "min": agg.min, "max": agg.max, "n": agg.n,
            }
            for label, agg in aggregates.items()
        },
        "per_topic": per_topic,
        "net_advantage": {
            "conditions": list(matrix.conditions),
            "cells": [list(row) for row in matrix.cells],
            "excluded": [list(row) for row in matrix.excluded],
        },
        "k_sweep": {
            "subset": list(subset),
            "points": [
                {"k": p.k, "mean": p.mean, "ci_low": p.ci_low, "ci_high": p.ci_high, "n": p.n}
                for p in sweep_points
            ],
        },
        "correlations": {"input_output": input_output, "popularity": popularity},
    }

    from .storage import dump_json

    outputs: dict[str, Path] = {}

    def _emit(name: str, text: str) -> None:
        path = report_dir / name
        atomic_write_text(path, text)
        outputs[name] = path

    _emit("stats.json", dump_json(stats))

    box = io.StringIO()
    box.write(_csv_line("condition", "n", "mean", "median", "std", "min", "q1", "q3", "max"))
    for label in labels:
        values = groups[label]
        agg = aggregates[label]
        box.write(_csv_line(
            label, agg.n, agg.mean, agg.median, agg.std, agg.min,
            quantile(values, 0.25), quantile(values, 0.75), agg.max,
        ))
    _emit("boxplot_stats.csv", box.getvalue())

    net = io.StringIO()
    net.write(_csv_line("condition", *labels))
    for i, label in enumerate(labels):
        net.write(_csv_line(label, *matrix.cells[i]))
    _emit("net_advantage.csv", net.getvalue())

    sweep = io.StringIO()
    sweep.write(_csv_line("k", "mean", "ci_low", "ci_high", "n"))
    for point in sweep_points:
        sweep.write(_csv_line(point.k, point.mean, point.ci_low, point.ci_high, point.n))
    _emit("k_sweep.csv", sweep.getvalue())

    corr = io.StringIO()
    corr.write(_csv_line("series", "k", "n", "r", "r_squared", "slope", "intercept", "p_value"))
    for k in cfg.ks:
        entry = input_output[str(k)]
        if "error" in entry:
            corr.write(_csv_line("input_output", k, 0, "", "", "", "", ""))
        else:
            corr.write(_csv_line("input_output", k, entry["n"], entry["r"], entry["r_squared"],
                                 entry["slope"], entry["intercept"], entry["p_value"]))
    if "error" in popularity:
        corr.write(_csv_line("popularity", "", 0, "", "", "", "", ""))
    else:
        corr.write(_csv_line("popularity", "", popularity["n"], popularity["r"],
                             popularity["r_squared"], popularity["slope"],
                             popularity["intercept"], popularity["p_value"]))
    _emit("correlations.csv", corr.getvalue())

    return outputs
