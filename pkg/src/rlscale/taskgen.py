"""Synthetic rule-verifiable tasks.

Two generator families are provided:

``modular-chain``
    ``a op b op c ... =`` with single-digit operands and ``op`` in
    ``+ - *``. The chain is evaluated strictly left to right modulo
    :data:`MODULUS`; the answer is the decimal digit string of the result.
    ``difficulty`` is the number of operators.

``copy-reverse``
    ``R d1 d2 ... dk`` with ``k = difficulty``; the answer is the digit
    string reversed.

A response earns reward 1 when the tokens between the first answer
delimiter and end-of-sequence equal the answer exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import vocab
from .errors import CapacityError, ConfigError, DataError
from .seeding import derive_seed

MODULUS = 11

_OPS = (vocab.PLUS, vocab.MINUS, vocab.TIMES)


class Family(str, Enum):
    MODULAR_CHAIN = "modular-chain"
    COPY_REVERSE = "copy-reverse"


# Inclusive difficulty range supported by each family.
DIFFICULTY_RANGE = {
    Family.MODULAR_CHAIN: (1, 8),
    Family.COPY_REVERSE: (1, 12),
}

_FAMILY_CODE = {Family.MODULAR_CHAIN: 1, Family.COPY_REVERSE: 2}


@dataclass(frozen=True)
class TaskInstance:
    task_id: str
    family: str
    difficulty: int
    prompt: tuple[int, ...]
    answer: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "family": self.family,
            "difficulty": self.difficulty,
            "prompt": list(self.prompt),
            "answer": list(self.answer),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TaskInstance":
        try:
            return cls(
                task_id=str(obj["task_id"]),
                family=str(obj["family"]),
                difficulty=int(obj["difficulty"]),
                prompt=tuple(int(t) for t in obj["prompt"]),
                answer=tuple(int(t) for t in obj["answer"]),
            )
        except KeyError as exc:
            raise DataError(f"task record missing field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class DatasetSpec:
    family: str
    size: int
    difficulty_min: int = 1
    difficulty_max: int = 1

    @property
    def difficulties(self) -> range:
        return range(self.difficulty_min, self.difficulty_max + 1)


@dataclass
class Dataset:
    instances: list[TaskInstance]
    seed: int
    spec: DatasetSpec
    _by_id: dict[str, TaskInstance] = field(default=None, init=False, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i):
        return self.instances[i]

    def by_id(self, task_id: str) -> TaskInstance:
        if self._by_id is None:
            self._by_id = {t.task_id: t for t in self.instances}
        return self._by_id[task_id]


def _family(family) -> Family:
    try:
        return Family(family)
    except ValueError:
        raise ConfigError(f"unsupported task family {family!r}") from None


def _check_difficulty(fam: Family, difficulty: int) -> None:
    lo, hi = DIFFICULTY_RANGE[fam]
    if not isinstance(difficulty, (int, np.integer)) or not lo <= difficulty <= hi:
        raise ConfigError(f"difficulty {difficulty!r} outside [{lo}, {hi}] for {fam.value}")


def eval_chain(operands: Sequence[int], ops: Sequence[int], modulus: int = MODULUS) -> int:
    acc = operands[0] % modulus
    for op, x in zip(ops, operands[1:]):
        if op == vocab.PLUS:
            acc = (acc + x) % modulus
        elif op == vocab.MINUS:
            acc = (acc - x) % modulus
        else:
            acc = (acc * x) % modulus
    return acc


def digits_of(n: int) -> tuple[int, ...]:
    return tuple(int(c) for c in str(n))


def generate_task(family, difficulty: int, seed: int, index: int) -> TaskInstance:
    """Generate one task; the result depends only on the four arguments."""
    fam = _family(family)
    _check_difficulty(fam, difficulty)
    rng = np.random.default_rng(derive_seed(seed, _FAMILY_CODE[fam], difficulty, index))
    if fam is Family.MODULAR_CHAIN:
        operands = [int(x) for x in rng.integers(0, 10, size=difficulty + 1)]
        ops = [_OPS[int(i)] for i in rng.integers(0, len(_OPS), size=difficulty)]
        prompt = [operands[0]]
        for op, x in zip(ops, operands[1:]):
            prompt += [op, x]
        prompt.append(vocab.EQUALS)
        answer = digits_of(eval_chain(operands, ops))
    else:
        body = [int(x) for x in rng.integers(0, 10, size=difficulty)]
        prompt = [vocab.REVERSE, *body]
        answer = tuple(reversed(body))
    return TaskInstance(
        task_id=f"{fam.value}:{difficulty}:{seed}:{index}",
        family=fam.value,
        difficulty=int(difficulty),
        prompt=tuple(prompt),
        answer=tuple(answer),
    )


def extract_answer(response: Sequence[int]) -> tuple[int, ...] | None:
    """Tokens between the first answer delimiter and EOS (or the end), or None."""
    tokens = list(response)
    if vocab.EOS in tokens:
        tokens = tokens[: tokens.index(vocab.EOS)]
    if vocab.ANSWER not in tokens:
        return None
    return tuple(tokens[tokens.index(vocab.ANSWER) + 1:])


def verify(task: TaskInstance, response: Sequence[int]) -> int:
    span = extract_answer(response)
    return int(span is not None and span == tuple(task.answer))


def delimited_answer(task: TaskInstance) -> tuple[int, ...]:
    """The canonical correct response: delimiter, answer, EOS."""
    return (vocab.ANSWER, *task.answer, vocab.EOS)


def capacity(family, difficulty: int) -> int:
    """Number of distinct prompts the family can produce at one difficulty."""
    fam = _family(family)
    _check_difficulty(fam, difficulty)
    if fam is Family.MODULAR_CHAIN:
        return 10 ** (difficulty + 1) * len(_OPS) ** difficulty
    return 10 ** difficulty


def prompt_length(family, difficulty: int) -> int:
    fam = _family(family)
    _check_difficulty(fam, difficulty)
    if fam is Family.MODULAR_CHAIN:
        return 2 * difficulty + 2
    return difficulty + 1


def stratum_sizes(spec: DatasetSpec) -> dict[int, int]:
    """Per-difficulty instance counts: an even split, remainder to the easiest strata."""
    diffs = list(spec.difficulties)
    if not diffs:
        raise ConfigError("empty difficulty range")
    base, extra = divmod(spec.size, len(diffs))
    return {d: base + (1 if i < extra else 0) for i, d in enumerate(diffs)}


def build_dataset(spec: DatasetSpec, seed: int) -> Dataset:
    """Build ``spec.size`` tasks with distinct prompts, stratified by difficulty.

    Instances are ordered by difficulty, then by generation index.
    """
    if spec.size < 1:
        raise ConfigError("dataset size must be >= 1")
    fam = _family(spec.family)
    sizes = stratum_sizes(spec)
    for d, n in sizes.items():
        cap = capacity(fam, d)
        if n > cap:
            raise CapacityError(
                f"{fam.value} difficulty {d} has {cap} distinct instances, {n} requested"
            )
    instances: list[TaskInstance] = []
    for d, n in sizes.items():
        seen: set[tuple[int, ...]] = set()
        index = 0
        while len(seen) < n:
            task = generate_task(fam, d, seed, index)
            index += 1
            if task.prompt in seen:
                continue
            seen.add(task.prompt)
            instances.append(task)
    return Dataset(instances=instances, seed=seed, spec=spec)


def estimate_pass_rate(policy, task: TaskInstance, n_samples: int, temperature: float,
                       seed: int, max_len: int | None = None) -> float:
    """Fraction of ``n_samples`` sampled responses that verify."""
    from .policy import sample_many

    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    if max_len is None:
        max_len = len(task.answer) + 2
    seeds = [derive_seed(seed, i) for i in range(n_samples)]
    responses = sample_many(policy, [task.prompt] * n_samples, temperature, max_len, seeds)
    return sum(verify(task, r.tokens) for r in responses) / n_samples


def save_tasks(tasks: Iterable[TaskInstance], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(json.dumps(t.to_json(), separators=(",", ":")) + "\n")


def load_tasks(path) -> list[TaskInstance]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            out.append(TaskInstance.from_json(obj))
    return out
