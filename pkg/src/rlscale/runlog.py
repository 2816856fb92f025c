"""Run persistence: per-step records, manifests and multi-run sets.

Layout of one run directory::

    <run_id>/manifest.json   run manifest (one JSON document)
    <run_id>/steps.log       one JSON object per line, one line per StepRecord

Units are natural: tokens, FLOPs, fractions. A crash mid-write leaves a
valid prefix plus at most one partial trailing line, which ``load_runs``
drops and counts.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable

from .errors import DataError, FitError, FormatError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
STEPS_NAME = "steps.log"

X_AXES = ("flops", "data", "steps")
Y_AXES = ("loss", "length")


@dataclass(frozen=True)
class StepRecord:
    step: int
    tokens_this_step: int
    cumulative_tokens: int
    cumulative_flops: float
    unique_samples_seen: int
    train_reward_mean: float
    mean_response_length: float
    eval_loss: float | None = None

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict, version: int = FORMAT_VERSION) -> "StepRecord":
        if not isinstance(obj, dict):
            raise FormatError("step record is not an object", version=version)
        kwargs = {}
        for f in fields(cls):
            if f.name not in obj:
                if f.name == "eval_loss":
                    kwargs[f.name] = None
                    continue
                raise FormatError(f"missing field {f.name!r}", field=f.name, version=version)
            value = obj[f.name]
            try:
                if f.name in ("step", "tokens_this_step", "cumulative_tokens", "unique_samples_seen"):
                    if isinstance(value, bool) or int(value) != value:
                        raise TypeError
                    value = int(value)
                elif value is not None or f.name != "eval_loss":
                    value = float(value)
            except (TypeError, ValueError):
                raise FormatError(f"field {f.name!r} has invalid value {value!r}",
                                  field=f.name, version=version) from None
            kwargs[f.name] = value
        extra = set(obj) - {f.name for f in fields(cls)}
        if extra:
            name = sorted(extra)[0]
            raise FormatError(f"unexpected field {name!r}", field=name, version=version)
        return cls(**kwargs)

    def to_line(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":")) + "\n"


def check_order(prev: StepRecord | None, rec: StepRecord) -> None:
    if prev is None:
        return
    if rec.step <= prev.step:
        raise DataError(f"step {rec.step} does not follow step {prev.step}")
    for name in ("cumulative_tokens", "cumulative_flops", "unique_samples_seen"):
        if getattr(rec, name) < getattr(prev, name):
            raise DataError(f"{name} decreased at step {rec.step}")


@dataclass
class RunManifest:
    run_id: str
    arch: dict
    n_nonembed: int
    train: dict
    schedule: dict
    dataset: dict
    variant: str = "base"
    tags: dict = field(default_factory=dict)
    code_version: str = ""
    format_version: int = FORMAT_VERSION

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "RunManifest":
        version = obj.get("format_version")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported manifest format_version {version!r}",
                              field="format_version", version=version)
        names = {f.name for f in fields(cls)}
        required = ("run_id", "arch", "n_nonembed", "train", "schedule", "dataset")
        for name in required:
            if name not in obj:
                raise FormatError(f"manifest missing field {name!r}", field=name, version=version)
        return cls(**{k: v for k, v in obj.items() if k in names})


def write_manifest(manifest: RunManifest, run_dir) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class RunWriter:
    """Append-only sink for one run's step log.

    Each record is written as a single line and flushed; with ``fsync`` the
    line is also forced to disk before ``append_record`` returns.
    """

    def __init__(self, path, fsync: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")
        self._fsync = fsync
        self.last: StepRecord | None = None
        self.count = 0

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def append_record(sink: RunWriter, record: StepRecord) -> int:
    """Append ``record``; returns the number of records written so far."""
    check_order(sink.last, record)
    sink._fh.write(record.to_line())
    sink._fh.flush()
    if sink._fsync:
        os.fsync(sink._fh.fileno())
    sink.last = record
    sink.count += 1
    return sink.count


def write_records(records: Iterable[StepRecord], path) -> None:
    with RunWriter(path) as sink:
        for rec in records:
            append_record(sink, rec)


def read_records(path, version: int = FORMAT_VERSION) -> tuple[list[StepRecord], int]:
    """Parse a step log; returns (records, number of dropped partial lines)."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    # A complete file ends with "\n", leaving an empty final chunk.
    tail = lines.pop()
    records: list[StepRecord] = []
    dropped = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise FormatError(f"{path}:{lineno}: malformed record", version=version) from None
        records.append(StepRecord.from_json(obj, version))
    if tail.strip():
        try:
            records.append(StepRecord.from_json(json.loads(tail), version))
        except (json.JSONDecodeError, FormatError):
            dropped = 1
    prev = None
    for rec in records:
        check_order(prev, rec)
        prev = rec
    return records, dropped


@dataclass
class Run:
    manifest: RunManifest
    records: list[StepRecord]

    @property
    def run_id(self) -> str:
        return self.manifest.run_id

    @property
    def group(self) -> tuple[int, str]:
        return (self.manifest.n_nonembed, self.manifest.variant)


@dataclass
class RunSet:
    runs: list[Run] = field(default_factory=list)
    dropped_lines: int = 0

    def __len__(self) -> int:
        return len(self.runs)

    def __iter__(self):
        return iter(self.runs)

    def groups(self) -> dict[tuple[int, str], list[Run]]:
        out: dict[tuple[int, str], list[Run]] = {}
        for run in sorted(self.runs, key=lambda r: (r.group, r.run_id)):
            out.setdefault(run.group, []).append(run)
        return out

    def add(self, run: Run) -> None:
        if any(r.run_id == run.run_id for r in self.runs):
            raise DataError(f"duplicate run_id {run.run_id!r}")
        self.runs.append(run)


def load_run(run_dir) -> tuple[Run, int]:
    run_dir = Path(run_dir)
    try:
        obj = json.loads((run_dir / MANIFEST_NAME).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{run_dir / MANIFEST_NAME}: {exc}") from None
    manifest = RunManifest.from_json(obj)
    steps = run_dir / STEPS_NAME
    records, dropped = read_records(steps, manifest.format_version) if steps.exists() else ([], 0)
    return Run(manifest, records), dropped


def find_run_dirs(root) -> list[Path]:
    root = Path(root)
    if (root / MANIFEST_NAME).exists():
        return [root]
    return sorted(p.parent for p in root.rglob(MANIFEST_NAME))


def load_runs(paths) -> RunSet:
    """Load every run found under ``paths`` (directories or run directories)."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    runset = RunSet()
    for root in paths:
        for run_dir in find_run_dirs(root):
            run, dropped = load_run(run_dir)
            runset.add(run)
            runset.dropped_lines += dropped
    if runset.dropped_lines:
        log.warning("dropped %d partial trailing line(s)", runset.dropped_lines)
    return runset


def _x_value(rec: StepRecord, x_axis: str) -> float:
    if x_axis == "flops":
        return rec.cumulative_flops
    if x_axis == "data":
        return float(rec.unique_samples_seen)
    if x_axis == "steps":
        return float(rec.step)
    raise DataError(f"unknown x axis {x_axis!r}; expected one of {X_AXES}")


def _y_value(rec: StepRecord, y: str) -> float:
    if y == "loss":
        return rec.eval_loss
    if y == "length":
        return rec.mean_response_length
    raise DataError(f"unknown y {y!r}; expected one of {Y_AXES}")


def run_series(run: Run, x_axis: str, y: str) -> list[tuple[float, float]]:
    """(x, y) at evaluation steps with x > 0; the initial x = 0 point is dropped."""
    out = []
    for rec in run.records:
        if rec.eval_loss is None:
            continue
        x = _x_value(rec, x_axis)
        if x > 0:
            out.append((x, _y_value(rec, y)))
    return out


def extract_series(runset: RunSet, x_axis: str, y: str) -> dict[str, list[tuple[float, float]]]:
    series = {run.run_id: run_series(run, x_axis, y) for run in runset}
    if not any(series.values()):
        raise FitError("no evaluation points with x > 0 in the run set")
    return series


def recompute_flops(n_nonembed: int, records: list[StepRecord]) -> list[float]:
    """Cumulative 6*N*T prefix sums rebuilt from ``tokens_this_step`` alone."""
    out, tokens = [], 0
    for rec in records:
        tokens += rec.tokens_this_step
        out.append(6.0 * n_nonembed * tokens)
    return out


def flops_consistent(n_nonembed: int, rec: StepRecord, rel: float = 1e-9) -> bool:
    expected = 6.0 * n_nonembed * rec.cumulative_tokens
    return math.isclose(rec.cumulative_flops, expected, rel_tol=rel)
