"""Experiment configuration files (YAML).

Hyperparameters appear under their full-scale names
(``learning_rate``, ``batch_size``, ``kl_loss_coefficient``,
``rollout_temperature_train``, ``rollout_temperature_eval``,
``clip_ratio``, ``group_size``); the full-scale values are kept for
reference under ``train.full_scale_reference`` and are never read by the
trainer.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from . import vocab
from .errors import ConfigError
from .grpo import FULL_SCALE_REFERENCE, TrainConfig
from .policy import ArchSpec
from .schedule import Ordering, ScheduleSpec
from .taskgen import MODULUS, DatasetSpec, prompt_length, stratum_sizes

# config key -> TrainConfig attribute
TRAIN_KEYS = {
    "learning_rate": "learning_rate",
    "batch_size": "batch_size",
    "group_size": "group_size",
    "kl_loss_coefficient": "kl_coeff",
    "clip_ratio": "clip_ratio",
    "rollout_temperature_train": "train_temperature",
    "rollout_temperature_eval": "eval_temperature",
    "max_prompt_len": "max_prompt_len",
    "max_response_len": "max_response_len",
    "seed": "seed",
}

DEFAULT_LADDER = (8, 16, 32, 64, 160)


@dataclass
class ModelConfig:
    embed_dim: int = 8
    hidden_dim: int = 8
    ladder: list[int] = field(default_factory=lambda: list(DEFAULT_LADDER))
    context_window: int = 32
    variant: str = "base"

    def arch(self, hidden_dim: int | None = None) -> ArchSpec:
        return ArchSpec(vocab.VOCAB_SIZE, self.embed_dim,
                        self.hidden_dim if hidden_dim is None else hidden_dim,
                        self.context_window)


@dataclass
class DataConfig:
    family: str = "copy-reverse"
    difficulty_min: int = 1
    difficulty_max: int = 1
    pool_size: int = 10
    seed: int = 0
    eval_size: int = 10
    eval_seed: int = 1

    def pool_spec(self) -> DatasetSpec:
        return DatasetSpec(self.family, self.pool_size, self.difficulty_min, self.difficulty_max)

    def eval_spec(self) -> DatasetSpec:
        return DatasetSpec(self.family, self.eval_size, self.difficulty_min, self.difficulty_max)


@dataclass
class ScheduleConfig:
    total_samples: int = 1600
    reuse_factor: int = 160
    ordering: str = Ordering.DIFFICULTY_ASCENDING.value
    seed: int = 0


@dataclass
class RunConfig:
    eval_every: int = 20
    replicates: int = 1
    max_flops: float | None = None
    out_dir: str = "runs"
    run_id: str | None = None


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_response_len=2))
    data: DataConfig = field(default_factory=DataConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def schedule_spec(self, seed: int | None = None) -> ScheduleSpec:
        s = self.schedule
        return ScheduleSpec(
            total_samples=s.total_samples,
            reuse_factor=s.reuse_factor,
            batch_size=self.train.batch_size,
            ordering=s.ordering,
            seed=s.seed if seed is None else seed,
        )

    def validate(self) -> "ExperimentConfig":
        if self.run.replicates < 1:
            raise ConfigError("run.replicates: must be >= 1")
        if self.run.eval_every < 1:
            raise ConfigError("run.eval_every: must be >= 1")
        if not self.model.ladder:
            raise ConfigError("model.ladder: must be nonempty")
        for w in self.model.ladder:
            self.model.arch(w)
        self.model.arch()
        self.schedule_spec()
        try:
            longest_prompt = max(prompt_length(self.data.family, d)
                                 for d in self.data.pool_spec().difficulties)
            stratum_sizes(self.data.pool_spec())
        except ValueError as exc:
            raise ConfigError(f"data: {exc}") from None
        if longest_prompt > self.train.max_prompt_len:
            raise ConfigError("train.max_prompt_len: shorter than the longest generated prompt")
        longest_answer = self.data.difficulty_max if self.data.family == "copy-reverse" \
            else len(str(MODULUS - 1))
        if self.train.max_response_len < longest_answer + 1:
            raise ConfigError("train.max_response_len: too short for delimiter plus answer")
        if longest_prompt + self.train.max_response_len > self.model.context_window:
            raise ConfigError("model.context_window: too small for prompt + response")
        if self.run.max_flops is not None and self.run.max_flops <= 0:
            raise ConfigError("run.max_flops: must be > 0")
        return self

    def to_dict(self) -> dict:
        train = {key: getattr(self.train, attr) for key, attr in TRAIN_KEYS.items()}
        train["full_scale_reference"] = dict(FULL_SCALE_REFERENCE)
        return {
            "model": dict(self.model.__dict__, ladder=list(self.model.ladder)),
            "train": train,
            "data": dict(self.data.__dict__),
            "schedule": dict(self.schedule.__dict__),
            "run": dict(self.run.__dict__),
        }


def _section(cls, raw, name: str, **defaults):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    kwargs = dict(defaults)
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _typed(name: str, value, kind):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    return value


_TRAIN_TYPES = {"learning_rate": float, "batch_size": int, "group_size": int,
                "kl_loss_coefficient": float, "clip_ratio": float,
                "rollout_temperature_train": float, "rollout_temperature_eval": float,
                "max_prompt_len": int, "max_response_len": int, "seed": int}


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = copy.deepcopy(raw or {})
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at the top level")
    unknown = set(raw) - {"model", "train", "data", "schedule", "run"}
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown section")
    base = ExperimentConfig()

    train_raw = raw.get("train") or {}
    if not isinstance(train_raw, dict):
        raise ConfigError("train: expected a mapping")
    train_kwargs = {}
    for key, value in train_raw.items():
        if key == "full_scale_reference":
            continue
        if key not in TRAIN_KEYS:
            raise ConfigError(f"train.{key}: unknown key")
        train_kwargs[TRAIN_KEYS[key]] = _typed(f"train.{key}", value, _TRAIN_TYPES[key])
    try:
        train = replace(base.train, **train_kwargs)
    except ConfigError as exc:
        raise ConfigError(f"train: {exc}") from None

    model = _section(ModelConfig, raw.get("model"), "model")
    for key in ("embed_dim", "hidden_dim", "context_window"):
        _typed(f"model.{key}", getattr(model, key), int)
    model.ladder = [_typed("model.ladder", w, int) for w in model.ladder]
    data = _section(DataConfig, raw.get("data"), "data")
    for key in ("difficulty_min", "difficulty_max", "pool_size", "seed", "eval_size", "eval_seed"):
        _typed(f"data.{key}", getattr(data, key), int)
    schedule = _section(ScheduleConfig, raw.get("schedule"), "schedule")
    for key in ("total_samples", "reuse_factor", "seed"):
        _typed(f"schedule.{key}", getattr(schedule, key), int)
    run = _section(RunConfig, raw.get("run"), "run")
    _typed("run.eval_every", run.eval_every, int)
    _typed("run.replicates", run.replicates, int)
    if run.max_flops is not None:
        run.max_flops = _typed("run.max_flops", run.max_flops, float)
    cfg = ExperimentConfig(model=model, train=train, data=data, schedule=schedule, run=run)
    try:
        return cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return config_from_dict(raw)


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
