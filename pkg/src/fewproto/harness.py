"""Evaluation harness: configuration, episode loop, statistics, reports.

One run evaluates `n_tasks` independent episodes and reports the mean
accuracy with a 95% confidence interval (1.96 * population stddev /
sqrt(T), the convention behind "+-" columns in few-shot results).

Episode i always uses the generator seeded with `seed + i`, so serial
and concurrent runs produce identical statistics. Episodes that hit a
fatal numerical condition are aborted, counted, and excluded; a run
fails outright if aborts exceed 1% of the requested tasks.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .classify import build_masks, classify_batch, score_episode
from .diagnostics import Diagnostics, EpisodeAbort
from .embeddings import EmbeddingSet, generate_synthetic, load_embedding_set, sample_episode
from .graph import build_task_graph
from .head import manifold_augment, train_head
from .prototypes import LossWeights, mean_prototypes, train_prototypes, validate_prototypes

ABORT_CAP_FRACTION = 0.01
# Seed stream for building a synthetic pool, distinct from episode streams.
POOL_STREAM = 0x706F6F6C


class RunError(RuntimeError):
    """The whole evaluation run is invalid (bad config, too many aborts)."""


@dataclass
class SyntheticSpec:
    """Parameters for an in-memory synthetic pool (no file involved)."""

    n_classes: int = 20
    per_class: int = 50
    dim: int = 64
    mean_scale: float = 10.0
    sigma: float = 0.1

    def __str__(self):
        return (f"{self.n_classes},{self.per_class},{self.dim},"
                f"{self.mean_scale!r},{self.sigma!r}")

    @classmethod
    def parse(cls, text: str) -> "SyntheticSpec":
        parts = text.split(",")
        if len(parts) != 5:
            raise ValueError(
                "synthetic spec must be n_classes,per_class,dim,mean_scale,sigma")
        return cls(int(parts[0]), int(parts[1]), int(parts[2]),
                   float(parts[3]), float(parts[4]))


@dataclass
class GraphConfig:
    top_m: int = 10
    self_weight: float = 1.0
    rounds: int = 3


@dataclass
class HeadConfig:
    epochs: int = 11
    lr: float = 1e-2
    n_aug: int = 5


@dataclass
class ProtoConfig:
    epochs: int = 1000
    lr: float = 1e-2
    entropy_weight: float = 0.1
    class_weight: float = 1.0
    strategy: str = "trained"  # trained | mean


@dataclass
class MaskConfig:
    # scale stays small because the softmax in the mask saturates once
    # scale * |prototype entry| reaches a few units; aggregated features
    # (and therefore mean prototypes) have O(10) entries.
    enabled: bool = True
    scale: float = 0.1
    boost: float = 10000.0


@dataclass
class RunConfig:
    """Everything that determines a run's statistics (not its speed)."""

    data: str | None = None
    synthetic: SyntheticSpec | None = None
    n_ways: int = 5
    k_shots: int = 5
    n_queries: int = 15
    n_tasks: int = 1000
    graph: GraphConfig = field(default_factory=GraphConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    proto: ProtoConfig = field(default_factory=ProtoConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    seed: int = 0

    def validate(self) -> None:
        if (self.data is None) == (self.synthetic is None):
            raise RunError("exactly one of data path or synthetic spec required")
        for name in ("n_ways", "k_shots", "n_queries", "n_tasks"):
            if getattr(self, name) < 1:
                raise RunError(f"{name} must be positive")
        if self.graph.top_m < 1 or self.graph.rounds < 0:
            raise RunError("graph.top_m must be >= 1 and graph.rounds >= 0")
        if self.head.epochs < 1 or self.proto.epochs < 1 or self.head.n_aug < 0:
            raise RunError("epoch counts must be >= 1 and head.n_aug >= 0")
        for val in (self.graph.self_weight, self.head.lr, self.proto.lr,
                    self.proto.entropy_weight, self.proto.class_weight,
                    self.mask.scale, self.mask.boost):
            if not np.isfinite(val):
                raise RunError("all real-valued config fields must be finite")
        if self.proto.entropy_weight < 0 or self.proto.class_weight < 0:
            raise RunError("loss weights must be non-negative")
        if self.proto.strategy not in ("trained", "mean"):
            raise RunError(f"unknown proto.strategy {self.proto.strategy!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise RunError("seed must fit in an unsigned 64-bit integer")

    def to_flat(self) -> dict:
        """Flat key/value view; nested groups become dotted keys."""
        out: dict = {
            "data": self.data,
            "synthetic": None if self.synthetic is None else str(self.synthetic),
            "n_ways": self.n_ways, "k_shots": self.k_shots,
            "n_queries": self.n_queries, "n_tasks": self.n_tasks,
            "seed": self.seed,
        }
        for group in ("graph", "head", "proto", "mask"):
            sub = getattr(self, group)
            for f in fields(sub):
                out[f"{group}.{f.name}"] = getattr(sub, f.name)
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        """Inverse of to_flat; unknown keys are an error."""
        cfg = cls()
        for key, value in flat.items():
            cfg.set_flat(key, value)
        return cfg

    def set_flat(self, key: str, value) -> None:
        if key == "data":
            self.data = None if value in (None, "") else str(value)
            return
        if key == "synthetic":
            self.synthetic = (None if value in (None, "") else
                              SyntheticSpec.parse(str(value)))
            return
        if "." in key:
            group_name, field_name = key.split(".", 1)
            group = getattr(self, group_name, None)
            if group_name not in ("graph", "head", "proto", "mask") or \
                    field_name not in {f.name for f in fields(group)}:
                raise RunError(f"unknown config key {key!r}")
            target_type = {f.name: f.type for f in fields(group)}[field_name]
            setattr(group, field_name, _coerce(value, target_type, key))
            return
        if key in ("n_ways", "k_shots", "n_queries", "n_tasks", "seed"):
            setattr(self, key, _coerce(value, "int", key))
            return
        raise RunError(f"unknown config key {key!r}")


def _coerce(value, type_name: str, key: str):
    if isinstance(value, str):
        text = value.strip()
        if type_name == "bool":
            if text.lower() in ("on", "true", "1", "yes"):
                return True
            if text.lower() in ("off", "false", "0", "no"):
                return False
            raise RunError(f"cannot parse boolean {key}={value!r}")
        if type_name == "int":
            return int(text)
        if type_name == "float":
            return float(text)
        return text
    if type_name == "int" and isinstance(value, bool):
        raise RunError(f"cannot parse integer {key}={value!r}")
    return value


def load_config_file(path) -> dict:
    """Parse a flat `key = value` config file; '#' starts a comment."""
    flat: dict = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise RunError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            flat[key.strip()] = value.strip()
    return flat


@dataclass
class EvalReport:
    """Result of one run; everything but wall_time is seed-deterministic."""

    config: dict
    per_task_accuracy: list[float]
    mean_accuracy: float
    ci95: float
    diagnostics: dict
    wall_time: dict

    def summary_line(self) -> str:
        return (f"{100.0 * self.mean_accuracy:.2f}% ± "
                f"{100.0 * self.ci95:.2f}% "
                f"({len(self.per_task_accuracy)} tasks)")


def confidence_interval_95(per_task: list[float]) -> float:
    """1.96 * population standard deviation / sqrt(T)."""
    arr = np.asarray(per_task, dtype=np.float64)
    return float(1.96 * arr.std(ddof=0) / np.sqrt(arr.size))


def episode_rng(seed: int, task_index: int) -> np.random.Generator:
    """The documented per-episode stream: generator seeded with seed + index."""
    return np.random.default_rng(seed + task_index)


def run_episode(emb: EmbeddingSet, config: RunConfig,
                rng: np.random.Generator,
                diag: Diagnostics | None = None,
                timings: dict | None = None) -> float:
    """One full task: sample, aggregate, train, classify, score.

    Raises EpisodeAbort on fatal numerical conditions; soft conditions
    only record diagnostics.
    """
    marks = [time.perf_counter()]

    def mark(name):
        marks.append(time.perf_counter())
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + marks[-1] - marks[-2]

    episode = sample_episode(emb, config.n_ways, config.k_shots,
                             config.n_queries, rng)
    mark("sample")
    tg = build_task_graph(episode.support_x, episode.query_x,
                          config.graph.top_m, config.graph.self_weight,
                          config.graph.rounds, diag)
    support_feats = tg.aggregated[tg.support_rows]
    query_feats = tg.aggregated[tg.query_rows]
    mark("graph")
    aug = manifold_augment(support_feats, episode.support_y,
                           config.head.n_aug, rng)
    head = train_head(aug, config.head.epochs, config.head.lr, rng, diag)
    mark("head")
    if config.proto.strategy == "trained":
        bank = train_prototypes(
            head, support_feats, episode.support_y,
            LossWeights(config.proto.entropy_weight, config.proto.class_weight),
            config.proto.epochs, config.proto.lr, rng)
    else:
        bank = mean_prototypes(support_feats, episode.support_y)
        validate_prototypes(bank.protos)
    mark("proto")
    masks = (build_masks(bank, config.mask.scale, config.mask.boost)
             if config.mask.enabled else None)
    predictions, _ = classify_batch(query_feats, bank, masks,
                                    config.mask.enabled, diag)
    accuracy = score_episode(episode, predictions)
    mark("classify")
    return accuracy


def _resolve_pool(config: RunConfig) -> EmbeddingSet:
    if config.data is not None:
        return load_embedding_set(config.data)
    spec = config.synthetic
    pool_rng = np.random.default_rng([config.seed, POOL_STREAM])
    return generate_synthetic(spec.n_classes, spec.per_class, spec.dim,
                              spec.mean_scale, spec.sigma, pool_rng)


def run_eval(config: RunConfig, workers: int = 1) -> EvalReport:
    """Evaluate `config.n_tasks` episodes and assemble the report.

    `workers` only controls concurrency; results are identical for any
    value because each episode derives its own generator from the run
    seed and the task index.
    """
    config.validate()
    emb = _resolve_pool(config)
    need = config.k_shots + config.n_queries
    usable = [c for c, idx in emb.class_index.items() if len(idx) >= need]
    if len(usable) < config.n_ways:
        raise RunError(
            f"pool has {len(usable)} classes with >= {need} records, "
            f"need {config.n_ways}")

    t_start = time.perf_counter()
    results: list[tuple] = [None] * config.n_tasks

    def one_task(i: int):
        diag = Diagnostics()
        timings: dict = {}
        try:
            acc = run_episode(emb, config, episode_rng(config.seed, i),
                              diag, timings)
            return acc, None, timings, diag
        except EpisodeAbort as abort:
            return None, abort.reason, timings, diag

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for i, res in enumerate(pool.map(one_task, range(config.n_tasks))):
                results[i] = res
    else:
        for i in range(config.n_tasks):
            results[i] = one_task(i)

    per_task: list[float] = []
    diagnostics = Diagnostics()
    wall_time: dict = {}
    aborted = 0
    for acc, abort_reason, timings, diag in results:
        diagnostics.merge(diag)
        for phase, dt in timings.items():
            wall_time[phase] = wall_time.get(phase, 0.0) + dt
        if abort_reason is None:
            per_task.append(acc)
        else:
            aborted += 1
            diagnostics.record(f"abort:{abort_reason}")
    diagnostics.record("aborted_episodes", aborted)

    if aborted > ABORT_CAP_FRACTION * config.n_tasks:
        raise RunError(
            f"{aborted} of {config.n_tasks} episodes aborted "
            f"(cap {ABORT_CAP_FRACTION:.0%}); diagnostics: "
            f"{diagnostics.as_dict()}")

    wall_time["total"] = time.perf_counter() - t_start
    return EvalReport(
        config=config.to_flat(),
        per_task_accuracy=per_task,
        mean_accuracy=float(np.mean(per_task)),
        ci95=confidence_interval_95(per_task),
        diagnostics=diagnostics.as_dict(),
        wall_time={k: wall_time[k] for k in sorted(wall_time)},
    )


def emit_report(report: EvalReport, path) -> None:
    """Write the report as JSON and print the one-line summary.

    JSON floats round-trip exactly (repr serialization), comfortably
    above the minimum six significant digits. Refuses to emit a report
    with no completed tasks.
    """
    if not report.per_task_accuracy:
        raise RunError("refusing to emit a report with no completed tasks")
    with open(path, "w") as f:
        json.dump(asdict(report), f, indent=2, sort_keys=True)
        f.write("\n")
    print(report.summary_line())


def load_report(path) -> EvalReport:
    """Inverse of emit_report."""
    with open(path) as f:
        raw = json.load(f)
    return EvalReport(**raw)


def reports_equal_ignoring_time(a: EvalReport, b: EvalReport) -> bool:
    """Determinism comparison: every field except wall_time must match."""
    da, db = asdict(a), asdict(b)
    da.pop("wall_time")
    db.pop("wall_time")
    return da == db
