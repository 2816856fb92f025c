import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import constant_policy, copy_policy, uniform_policy
from rlscale import vocab
from rlscale.errors import CapacityError, ConfigError, DataError
from rlscale.taskgen import (
    DIFFICULTY_RANGE, MODULUS, DatasetSpec, Family, TaskInstance, build_dataset, capacity,
    delimited_answer, estimate_pass_rate, extract_answer, generate_task, load_tasks,
    prompt_length, save_tasks, stratum_sizes, verify,
)

FAMILIES = [f.value for f in Family]


def interpret_chain(prompt):
    """Independent evaluator: parse the rendered prompt text and fold left to right."""
    text = vocab.render(prompt)
    assert text.endswith("=")
    body = text[:-1]
    acc = int(body[0])
    for op, digit in zip(body[1::2], body[2::2]):
        x = int(digit)
        acc = {"+": acc + x, "-": acc - x, "*": acc * x}[op] % MODULUS
    return tuple(int(c) for c in str(acc % MODULUS))


def test_modular_chain_self_consistent():
    task = generate_task("modular-chain", 1, seed=0, index=0)
    assert verify(task, delimited_answer(task)) == 1


def test_generation_is_deterministic():
    a = generate_task("modular-chain", 3, seed=7, index=5)
    b = generate_task("modular-chain", 3, seed=7, index=5)
    assert a == b
    assert a.prompt == b.prompt and a.answer == b.answer


def test_answer_matches_brute_force_interpreter():
    task = generate_task("modular-chain", 2, seed=1, index=0)
    assert task.answer == interpret_chain(task.prompt)
    for index in range(300):
        for d in (1, 4, 8):
            t = generate_task("modular-chain", d, seed=3, index=index)
            assert t.answer == interpret_chain(t.prompt)


def test_copy_reverse_answer():
    t = generate_task("copy-reverse", 5, seed=0, index=2)
    assert t.prompt[0] == vocab.REVERSE
    assert t.answer == tuple(reversed(t.prompt[1:]))


@pytest.mark.parametrize("family,difficulty", [("modular-chain", 0), ("modular-chain", 9),
                                               ("copy-reverse", 13), ("sorting", 1)])
def test_bad_family_or_difficulty(family, difficulty):
    with pytest.raises(ConfigError):
        generate_task(family, difficulty, 0, 0)


def test_self_consistency_over_many_instances():
    count = 0
    for family in FAMILIES:
        lo, hi = DIFFICULTY_RANGE[Family(family)]
        for d in range(lo, hi + 1):
            for index in range(60):
                t = generate_task(family, d, seed=11, index=index)
                assert t.answer and all(0 <= tok < vocab.VOCAB_SIZE for tok in t.answer)
                assert len(t.prompt) == prompt_length(family, d)
                assert verify(t, delimited_answer(t)) == 1
                count += 1
    assert count >= 1000


def test_verify_basic_cases():
    t = generate_task("copy-reverse", 3, 0, 0)
    assert verify(t, delimited_answer(t)) == 1
    assert verify(t, ()) == 0
    assert verify(t, t.answer) == 0  # no delimiter
    # trailing tokens after EOS are ignored, missing EOS is tolerated
    assert verify(t, (*delimited_answer(t), 3, 4)) == 1
    assert verify(t, (vocab.ANSWER, *t.answer)) == 1
    # leading junk before the delimiter is fine, extra answer tokens are not
    assert verify(t, (7, vocab.ANSWER, *t.answer, vocab.EOS)) == 1
    assert verify(t, (vocab.ANSWER, *t.answer, 0, vocab.EOS)) == 0


def test_verify_permutations_of_two_token_answer():
    t = TaskInstance("x", "copy-reverse", 2, (vocab.REVERSE, 4, 7), (7, 4))
    scores = [verify(t, (vocab.ANSWER, *p, vocab.EOS)) for p in itertools.permutations(t.answer)]
    assert sorted(scores) == [0, 1]


@given(st.lists(st.integers(0, vocab.VOCAB_SIZE - 1), max_size=12))
def test_verify_is_pure_and_binary(tokens):
    t = generate_task("modular-chain", 2, 0, 0)
    a, b = verify(t, tokens), verify(t, list(tokens))
    assert a == b and a in (0, 1)
    span = extract_answer(tokens)
    assert a == int(span == t.answer)


@given(st.sampled_from(FAMILIES), st.integers(1, 8), st.integers(0, 2**32), st.integers(0, 10**6))
@settings(max_examples=50)
def test_random_access_equals_sequential(family, difficulty, seed, index):
    t = generate_task(family, difficulty, seed, index)
    assert t == generate_task(family, difficulty, seed, index)
    assert verify(t, delimited_answer(t)) == 1


def test_build_dataset_small():
    ds = build_dataset(DatasetSpec("modular-chain", 10, 1, 3), seed=0)
    assert len(ds) == 10
    assert len({t.task_id for t in ds}) == 10
    assert len({t.prompt for t in ds}) == 10
    assert ds.instances == build_dataset(DatasetSpec("modular-chain", 10, 1, 3), seed=0).instances


def test_build_dataset_stratification():
    spec = DatasetSpec("modular-chain", 100, 1, 5)
    ds = build_dataset(spec, seed=2)
    hist = Counter(t.difficulty for t in ds)
    assert hist == {1: 20, 2: 20, 3: 20, 4: 20, 5: 20}
    assert stratum_sizes(DatasetSpec("copy-reverse", 11, 2, 4)) == {2: 4, 3: 4, 4: 3}


def test_build_dataset_capacity():
    assert capacity("copy-reverse", 1) == 10
    assert capacity("modular-chain", 1) == 300
    build_dataset(DatasetSpec("copy-reverse", 10, 1, 1), 0)
    with pytest.raises(CapacityError):
        build_dataset(DatasetSpec("copy-reverse", 11, 1, 1), 0)
    with pytest.raises(ConfigError):
        build_dataset(DatasetSpec("copy-reverse", 0), 0)


def test_dataset_by_id():
    ds = build_dataset(DatasetSpec("copy-reverse", 5, 2, 2), 4)
    assert ds.by_id(ds[3].task_id) is ds[3]


def test_task_jsonl_round_trip(tmp_path):
    ds = build_dataset(DatasetSpec("modular-chain", 20, 1, 4), 9)
    path = tmp_path / "tasks.jsonl"
    save_tasks(ds, path)
    assert load_tasks(path) == ds.instances
    assert len(path.read_text().splitlines()) == 20


def test_load_tasks_rejects_bad_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"task_id": "a", "family": "copy-reverse"}\n')
    with pytest.raises(DataError):
        load_tasks(path)
    path.write_text("not json\n")
    with pytest.raises(DataError):
        load_tasks(path)


def test_pass_rate_perfect_and_zero():
    task = generate_task("copy-reverse", 1, 0, 3)
    assert estimate_pass_rate(copy_policy(), task, 50, 1.0, seed=0) == 1.0
    assert estimate_pass_rate(constant_policy(vocab.EOS), task, 50, 1.0, seed=0) == 0.0
    with pytest.raises(ConfigError):
        estimate_pass_rate(copy_policy(), task, 0, 1.0, 0)


def test_pass_rate_uniform_policy_matches_bernoulli():
    # Response length 2 under a uniform policy: reward needs "#" then the
    # single answer digit, so p = 1 / V^2.
    task = generate_task("copy-reverse", 1, 0, 0)
    n = 40_000
    p = 1.0 / vocab.VOCAB_SIZE**2
    rate = estimate_pass_rate(uniform_policy(), task, n, 1.0, seed=5, max_len=2)
    assert abs(rate - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_pass_rate_deterministic():
    task = generate_task("copy-reverse", 1, 0, 0)
    a = estimate_pass_rate(uniform_policy(), task, 300, 1.0, seed=1, max_len=2)
    assert a == estimate_pass_rate(uniform_policy(), task, 300, 1.0, seed=1, max_len=2)


def test_pass_rate_non_increasing_in_difficulty():
    # The copy policy echoes only the last prompt digit, so it solves
    # difficulty 1 and nothing longer.
    policy = copy_policy()
    rates = []
    for d in range(1, 5):
        tasks = [generate_task("copy-reverse", d, 0, i) for i in range(30)]
        rates.append(np.mean([estimate_pass_rate(policy, t, 4, 1.0, seed=i)
                              for i, t in enumerate(tasks)]))
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert rates[0] == 1.0
