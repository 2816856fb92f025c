"""Shared builders for the test suite: hand-wired policies and synthetic run sets."""

from __future__ import annotations

import math

import numpy as np

from rlscale import vocab
from rlscale.policy import ArchSpec, PolicyParams
from rlscale.runlog import Run, RunManifest, RunSet, StepRecord

V = vocab.VOCAB_SIZE
_DIGITS = list(vocab.DIGITS)

# Published fitted lines: (k, E) by variant and model size.
MODEL_N = {"0.5B": 500_000_000, "1.5B": 1_500_000_000, "3B": 3_000_000_000,
           "7B": 7_000_000_000, "14B": 14_000_000_000}
TABLE_LC = {
    "base": {"0.5B": (0.0075, 0.1140), "1.5B": (0.0338, 0.5889), "3B": (0.0168, 0.2448),
             "7B": (0.0370, 0.5562), "14B": (0.0680, 1.1023)},
    "instruct": {"0.5B": (0.0055, 0.0744), "1.5B": (0.0063, 0.0718), "3B": (0.0153, 0.2013),
                 "7B": (0.0436, 0.6600), "14B": (0.0454, 0.6361)},
}
TABLE_LD = {
    "base": {"0.5B": (0.0070, 0.0117), "1.5B": (0.0268, 0.0839), "3B": (0.0181, 0.0127),
             "7B": (0.0409, 0.0359), "14B": (0.0739, 0.1200)},
    "instruct": {"0.5B": (0.0054, 0.0002), "1.5B": (0.0065, -0.0150), "3B": (0.0164, -0.0112),
                 "7B": (0.0469, 0.0399), "14B": (0.0504, -0.0167)},
}


def copy_policy(shift: int = 0, margin: float = 60.0) -> PolicyParams:
    """Hand-wired policy for one-digit copy-reverse prompts ``R d``.

    The hidden state holds a one-hot of the current token and, through the
    recurrence, of the previous one. It answers ``# (d+shift)%10 $`` with
    near-certainty, so ``shift=0`` is always right and any other shift is
    always wrong.
    """
    arch = ArchSpec(V, V, 2 * V, 32)
    E = np.eye(V)
    W_x = np.zeros((2 * V, V))
    W_x[:V] = 5.0 * np.eye(V)
    W_h = np.zeros((2 * V, 2 * V))
    W_h[V:, :V] = 5.0 * np.eye(V)
    W_o = np.zeros((V, 2 * V))
    # columns [0, V) see the current token, [V, 2V) the previous one
    # current token is a digit and previous is not the delimiter -> delimiter
    W_o[vocab.ANSWER, _DIGITS] = 100.0
    W_o[vocab.ANSWER, V + vocab.ANSWER] = -100.0
    # previous token is digit d -> emit d + shift (wins only after the delimiter)
    for d in _DIGITS:
        W_o[(d + shift) % 10, V + d] = margin
    # previous token is the delimiter -> EOS
    W_o[vocab.EOS, V + vocab.ANSWER] = 200.0
    return PolicyParams.from_parts(arch, E=E, W_x=W_x, W_h=W_h, W_o=W_o)


def constant_policy(token: int, logit: float = 1000.0) -> PolicyParams:
    """Emits ``token`` at every position regardless of context."""
    arch = ArchSpec(V, 2, 2, 32)
    b_o = np.zeros(V)
    b_o[token] = logit
    return PolicyParams.from_parts(arch, b_o=b_o)


def uniform_policy() -> PolicyParams:
    return PolicyParams.from_parts(ArchSpec(V, 2, 2, 32))


def make_manifest(run_id: str, n: int, variant: str = "base", **tags) -> RunManifest:
    return RunManifest(run_id=run_id, arch={}, n_nonembed=n, train={}, schedule={},
                       dataset={}, variant=variant, tags=dict(tags))


def make_records(points, n: int) -> list[StepRecord]:
    """Records from (cumulative_tokens, unique_samples_seen, eval_loss) triples.

    ``cumulative_flops`` is ``6 * n * cumulative_tokens``; a step-0 record
    with zero counters is prepended.
    """
    recs = [StepRecord(0, 0, 0, 0.0, 0, 0.0, 0.0, eval_loss=1.0)]
    prev_tokens = 0
    for step, (tokens, unique, loss) in enumerate(points, 1):
        recs.append(StepRecord(step=step, tokens_this_step=tokens - prev_tokens,
                               cumulative_tokens=tokens, cumulative_flops=6.0 * n * tokens,
                               unique_samples_seen=unique, train_reward_mean=0.5,
                               mean_response_length=2.0, eval_loss=loss))
        prev_tokens = tokens
    return recs


def constant_rate_runset(ns=(300, 1200, 5000), tokens_per_sample=(7, 11, 13), seeds=(0, 1),
                         variants=("base", "instruct")) -> RunSet:
    """Runs where every sample costs a fixed token count, so ``C = N D phi`` exactly."""
    runset = RunSet()
    for variant in variants:
        for n, tps in zip(ns, tokens_per_sample):
            for seed in seeds:
                rng = np.random.default_rng([n, seed, len(variant)])
                unique = np.cumsum(rng.integers(1, 50, size=12))
                loss = np.exp(-0.08 * np.log(unique) + 0.1 + rng.normal(0, 0.05, size=unique.size))
                pts = [(int(u) * tps, int(u), float(min(l, 1.0))) for u, l in zip(unique, loss)]
                runset.add(Run(make_manifest(f"{variant}-{n}-{seed}", n, variant),
                               make_records(pts, n)))
    return runset


def table_runset(points_per_run: int = 12) -> RunSet:
    """One run per (size, variant), lying exactly on both published lines.

    Cumulative tokens T are integers in [1e6, 1e9]; C = 6 N T, L follows the
    compute line and D is placed on the data line through the same L.
    """
    runset = RunSet()
    tokens = np.unique(np.round(np.geomspace(1e6, 1e9, points_per_run)).astype(np.int64))
    for variant in ("base", "instruct"):
        for size, n in MODEL_N.items():
            k_c, e_c = TABLE_LC[variant][size]
            k_d, e_d = TABLE_LD[variant][size]
            pts = []
            for t in tokens:
                ln_l = -k_c * math.log(6.0 * n * int(t)) + e_c
                d = round(math.exp((e_d - ln_l) / k_d))
                pts.append((int(t), d, math.exp(ln_l)))
            recs = make_records(pts, n)
            runset.add(Run(make_manifest(f"{size}-{variant}", n, variant), recs))
    return runset
