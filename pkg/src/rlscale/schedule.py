"""Curriculum ordering and the data-reuse schedule.

A reuse schedule draws ``S / tau`` distinct tasks uniformly without
replacement (a fresh draw per seed, never a subset of another run's draw),
sorts them easy to hard, and repeats that exact order ``tau`` times, so
every epoch presents the same sequence.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CapacityError, ConfigError, DataError
from .taskgen import Dataset, TaskInstance

DEFAULT_TAU_SWEEP = (1, 5, 25, 100)


class Ordering(str, Enum):
    DIFFICULTY_ASCENDING = "difficulty-ascending"
    PASS_RATE_DESCENDING = "pass-rate-descending"


@dataclass(frozen=True)
class ScheduleSpec:
    total_samples: int
    reuse_factor: int = 1
    batch_size: int = 1
    ordering: str = Ordering.DIFFICULTY_ASCENDING.value
    seed: int = 0

    def __post_init__(self):
        if self.total_samples < 1:
            raise ConfigError("total_samples must be >= 1")
        if self.reuse_factor < 1:
            raise ConfigError("reuse_factor must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.total_samples % self.reuse_factor:
            raise ConfigError(
                f"total_samples {self.total_samples} not divisible by reuse_factor {self.reuse_factor}"
            )
        if self.total_samples % self.batch_size:
            raise ConfigError(
                f"total_samples {self.total_samples} not divisible by batch_size {self.batch_size}"
            )
        Ordering(self.ordering)

    @property
    def unique_samples(self) -> int:
        return self.total_samples // self.reuse_factor

    @property
    def steps(self) -> int:
        return self.total_samples // self.batch_size

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SampleStream:
    task_ids: tuple[str, ...]
    epoch_length: int
    seed: int
    reuse_factor: int

    @property
    def total_samples(self) -> int:
        return len(self.task_ids)

    def epochs(self) -> list[tuple[str, ...]]:
        n = self.epoch_length
        return [self.task_ids[i:i + n] for i in range(0, len(self.task_ids), n)]

    def batches(self, batch_size: int) -> list[tuple[str, ...]]:
        ids = self.task_ids
        return [ids[i:i + batch_size] for i in range(0, len(ids), batch_size)]

    def resolve(self, dataset: Dataset) -> list[TaskInstance]:
        return [dataset.by_id(t) for t in self.task_ids]


def _id_key(task_id: str) -> tuple:
    # Natural order, so "...:2" sorts before "...:10".
    return tuple(int(p) if p.isdigit() else p for p in re.split(r"(\d+)", task_id))


def curriculum_sort(dataset: Dataset | Sequence[TaskInstance], key=Ordering.DIFFICULTY_ASCENDING,
                    pass_rates: Mapping[str, float] | None = None) -> list[TaskInstance]:
    """Easy first: ascending difficulty, or descending pass rate; ties by task_id."""
    key = Ordering(key)
    tasks = list(dataset)
    if key is Ordering.DIFFICULTY_ASCENDING:
        if pass_rates is not None:
            raise ConfigError("pass_rates are only used with pass-rate-descending ordering")
        return sorted(tasks, key=lambda t: (t.difficulty, _id_key(t.task_id)))
    if pass_rates is None:
        raise ConfigError("pass-rate-descending ordering needs pass_rates")
    missing = [t.task_id for t in tasks if t.task_id not in pass_rates]
    if missing:
        raise DataError(f"no pass rate for task {missing[0]!r}")
    return sorted(tasks, key=lambda t: (-pass_rates[t.task_id], _id_key(t.task_id)))


def make_reuse_schedule(dataset: Dataset | Sequence[TaskInstance], spec: ScheduleSpec,
                        pass_rates: Mapping[str, float] | None = None) -> SampleStream:
    tasks = list(dataset)
    k = spec.unique_samples
    if len(tasks) < k:
        raise CapacityError(f"dataset has {len(tasks)} tasks, schedule needs {k} unique")
    rng = np.random.default_rng(spec.seed)
    chosen = rng.choice(len(tasks), size=k, replace=False)
    subset = curriculum_sort([tasks[i] for i in sorted(chosen)], spec.ordering, pass_rates)
    epoch = tuple(t.task_id for t in subset)
    return SampleStream(task_ids=epoch * spec.reuse_factor, epoch_length=k,
                        seed=spec.seed, reuse_factor=spec.reuse_factor)


def save_stream(stream: SampleStream, path) -> None:
    """Newline-delimited ids after a ``#`` header line with seed, tau and S."""
    header = f"# seed={stream.seed} tau={stream.reuse_factor} total={stream.total_samples}\n"
    Path(path).write_text(header + "".join(t + "\n" for t in stream.task_ids), encoding="utf-8")


def load_stream(path) -> SampleStream:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DataError(f"{path}: missing schedule header")
    try:
        fields = dict(item.split("=", 1) for item in lines[0][1:].split())
        seed, tau, total = int(fields["seed"]), int(fields["tau"]), int(fields["total"])
    except (KeyError, ValueError):
        raise DataError(f"{path}: malformed schedule header {lines[0]!r}") from None
    ids = tuple(line for line in lines[1:] if line)
    if len(ids) != total or total % tau:
        raise DataError(f"{path}: header says {total} samples, found {len(ids)}")
    return SampleStream(task_ids=ids, epoch_length=total // tau, seed=seed, reuse_factor=tau)
