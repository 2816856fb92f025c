"""Group Relative Policy Optimization on the toy policies.

For every prompt the trainer samples a group of ``G`` responses, scores
them with the rule verifier and normalizes the rewards within the group::

    A_i = (r_i - mean(r)) / std(r)        population std; A_i = 0 if std < 1e-8

The per-group objective, maximized, is::

    J = 1/G sum_i 1/|o_i| sum_t [ min(rho_t A_i, clip(rho_t, 1-eps, 1+eps) A_i) - beta KL_t ]
    rho_t = exp(logp_t - logp_old_t)
    KL_t  = exp(d_t) - d_t - 1,  d_t = logp_ref_t - logp_t

``grpo_objective`` returns ``-J`` and its exact gradient. Where the clipped
branch is selected the surrogate is flat in theta; when both branches are
equal the unclipped gradient is used.

Each step runs one update per rollout batch, so ``rho = 1`` at update time
unless the policy is changed between rollout and update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .compute import step_flops
from .errors import ConfigError, DataError, NumericError
from .policy import PolicyParams, Response, _Tape, logprob_many, sample_many
from .runlog import RunWriter, StepRecord, append_record
from .seeding import derive_seed
from .taskgen import TaskInstance, verify

STD_EPS = 1e-8

# Stream tags keep rollout and evaluation randomness disjoint.
_ROLLOUT_STREAM = 1
_EVAL_STREAM = 2

# Hyperparameters of the full-scale reference setup; recorded for audit, not
# used as toy defaults.
FULL_SCALE_REFERENCE = {
    "learning_rate": 1.0e-6,
    "batch_size": 512,
    "kl_loss_coefficient": 0.001,
    "rollout_temperature_train": 1.0,
    "rollout_temperature_eval": 0.7,
    "clip_ratio": 0.2,
    "max_prompt_len": 2048,
    "max_response_len": 4096,
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 8
    group_size: int = 8
    kl_coeff: float = 0.001
    clip_ratio: float = 0.2
    train_temperature: float = 1.0
    eval_temperature: float = 0.7
    max_prompt_len: int = 32
    max_response_len: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.clip_ratio < 1:
            raise ConfigError("clip_ratio must be in (0, 1)")
        if self.kl_coeff < 0:
            raise ConfigError("kl_coeff must be >= 0")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (self.train_temperature > 0 and self.eval_temperature > 0):
            raise ConfigError("temperatures must be > 0")
        if self.max_response_len < 1 or self.max_prompt_len < 1:
            raise ConfigError("sequence length limits must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RolloutGroup:
    task: TaskInstance
    responses: list[Response]
    old_logprobs: list[np.ndarray]
    ref_logprobs: list[np.ndarray]
    rewards: np.ndarray

    def __post_init__(self):
        G = len(self.responses)
        if G < 2:
            raise ConfigError("a rollout group needs at least 2 responses")
        if not (len(self.old_logprobs) == len(self.ref_logprobs) == len(self.rewards) == G):
            raise DataError("rollout group fields disagree on the group size")

    @property
    def task_id(self) -> str:
        return self.task.task_id

    @property
    def prompt(self) -> tuple[int, ...]:
        return self.task.prompt

    @property
    def size(self) -> int:
        return len(self.responses)

    def tokens(self) -> int:
        return sum(len(self.prompt) + r.length for r in self.responses)


@dataclass(frozen=True)
class TrainerState:
    policy: PolicyParams
    reference: PolicyParams
    step: int = 0
    cumulative_tokens: int = 0
    cumulative_flops: float = 0.0
    seen: frozenset = frozenset()


def init_state(policy: PolicyParams) -> TrainerState:
    return TrainerState(policy=policy, reference=policy)


def compute_advantages(rewards) -> np.ndarray:
    """``(r - mean) / std`` with the population std; all zeros if std < 1e-8.

    The squared standardized value ``(r_i - mean)^2 / var`` is formed in
    exact integer arithmetic before the final square root, so shifting or
    positively rescaling the rewards gives bit-identical advantages whenever
    the transformed rewards are themselves exact floats.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ConfigError("advantages need a group of at least 2 rewards")
    if not np.all(np.isfinite(r)):
        raise NumericError("non-finite reward")
    # every float is m / 2^e; scale by the largest 2^e to work in integers
    ratios = [float(x).as_integer_ratio() for x in r]
    scale = max(den for _, den in ratios)
    ints = [num * (scale // den) for num, den in ratios]
    n, total = len(ints), sum(ints)
    centered = [n * a - total for a in ints]  # n * scale * (r_i - mean)
    ss = sum(c * c for c in centered)
    eps_num, eps_den = (STD_EPS**2).as_integer_ratio()
    if ss * eps_den < eps_num * n**3 * scale * scale:  # var < STD_EPS^2, exactly
        return np.zeros_like(r)
    # (r_i - mean)^2 / var = n c_i^2 / sum_j c_j^2; int division rounds correctly
    return np.array([math.sqrt(n * c * c / ss) * (1 if c > 0 else -1) if c else 0.0
                     for c in centered])


def _objective(policy: PolicyParams, groups: Sequence[RolloutGroup], eps: float, beta: float):
    prompts, responses = [], []
    for g in groups:
        for resp in g.responses:
            prompts.append(g.prompt)
            responses.append(resp.tokens)
    tape = _Tape(policy, prompts, responses)
    current = tape.response_logprobs()

    loss = 0.0
    weights = []
    k = 0
    for g in groups:
        adv = compute_advantages(g.rewards)
        G = g.size
        for i in range(G):
            cur = current[k]
            k += 1
            old = np.asarray(g.old_logprobs[i], dtype=np.float64)
            ref = np.asarray(g.ref_logprobs[i], dtype=np.float64)
            if not (cur.shape == old.shape == ref.shape):
                raise DataError(f"logprob lengths disagree for response {i} of {g.task_id}")
            n = cur.size
            if n == 0:
                raise DataError(f"empty response {i} of {g.task_id}")
            ratio = np.exp(cur - old)
            unclipped = ratio * adv[i]
            clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv[i]
            surrogate = np.minimum(unclipped, clipped)
            d_surrogate = np.where(unclipped <= clipped, unclipped, 0.0)
            delta = ref - cur
            kl = np.exp(delta) - delta - 1.0
            d_kl = 1.0 - np.exp(delta)
            loss -= (surrogate - beta * kl).sum() / (G * n)
            weights.append(-(d_surrogate - beta * d_kl) / (G * n))
    grad = tape.backward(weights)
    return float(loss), grad


def grpo_objective(policy: PolicyParams, group: RolloutGroup, eps: float, beta: float):
    """Negated GRPO objective of one group and its gradient with respect to theta."""
    return _objective(policy, [group], eps, beta)


def rollout_batch(state: TrainerState, tasks: Sequence[TaskInstance], config: TrainConfig):
    """Sample ``G`` responses per task; returns (groups, tokens processed).

    Response ``j`` of task ``i`` uses seed ``derive_seed(seed, 1, step, i, j)``.
    """
    if not tasks:
        raise ConfigError("rollout needs at least one task")
    G = config.group_size
    prompts, seeds = [], []
    for i, task in enumerate(tasks):
        if len(task.prompt) > config.max_prompt_len:
            raise DataError(f"prompt of {task.task_id} longer than max_prompt_len")
        for j in range(G):
            prompts.append(task.prompt)
            seeds.append(derive_seed(config.seed, _ROLLOUT_STREAM, state.step, i, j))
    responses = sample_many(state.policy, prompts, config.train_temperature,
                            config.max_response_len, seeds)
    tokens = [r.tokens for r in responses]
    if state.reference is state.policy:
        ref = [r.logprobs.copy() for r in responses]
    else:
        ref = logprob_many(state.reference, prompts, tokens)

    groups = []
    for i, task in enumerate(tasks):
        sl = slice(i * G, (i + 1) * G)
        resp = responses[sl]
        groups.append(RolloutGroup(
            task=task,
            responses=resp,
            old_logprobs=[r.logprobs.copy() for r in resp],
            ref_logprobs=ref[sl],
            rewards=np.array([verify(task, r.tokens) for r in resp], dtype=np.float64),
        ))
    processed = sum(len(p) + len(t) for p, t in zip(prompts, tokens))
    return groups, processed


def train_step(state: TrainerState, groups: Sequence[RolloutGroup], config: TrainConfig):
    """One gradient-descent update on the summed group objectives."""
    loss, grad = _objective(state.policy, groups, config.clip_ratio, config.kl_coeff)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite loss or gradient at step {state.step + 1}")
    theta = state.policy.theta - config.learning_rate * grad
    if not np.all(np.isfinite(theta)):
        raise NumericError(f"non-finite parameters after step {state.step + 1}")

    t_step = sum(g.tokens() for g in groups)
    n = state.policy.n_nonembed
    seen = state.seen | {g.task_id for g in groups}
    new_state = TrainerState(
        policy=state.policy.with_theta(theta),
        reference=state.reference,
        step=state.step + 1,
        cumulative_tokens=state.cumulative_tokens + t_step,
        cumulative_flops=state.cumulative_flops + step_flops(n, t_step),
        seen=frozenset(seen),
    )
    rewards = np.concatenate([g.rewards for g in groups])
    lengths = [r.length for g in groups for r in g.responses]
    record = StepRecord(
        step=new_state.step,
        tokens_this_step=t_step,
        cumulative_tokens=new_state.cumulative_tokens,
        cumulative_flops=new_state.cumulative_flops,
        unique_samples_seen=len(seen),
        train_reward_mean=float(rewards.mean()),
        mean_response_length=float(np.mean(lengths)),
    )
    return new_state, record


@dataclass
class EvalResult:
    loss: float
    correct: int
    total: int


def evaluate(policy: PolicyParams, tasks: Sequence[TaskInstance], temperature: float,
             seed: int, max_len: int) -> EvalResult:
    """Test loss ``1 - R / R_max`` from one sample per task."""
    if not tasks:
        raise DataError("empty evaluation set")
    seeds = [derive_seed(seed, _EVAL_STREAM, k) for k in range(len(tasks))]
    responses = sample_many(policy, [t.prompt for t in tasks], temperature, max_len, seeds)
    correct = sum(verify(t, r.tokens) for t, r in zip(tasks, responses))
    return EvalResult(loss=1.0 - correct / len(tasks), correct=correct, total=len(tasks))


@dataclass
class RunLog:
    records: list[StepRecord] = field(default_factory=list)
    state: TrainerState | None = None
    stopped_on_budget: bool = False


def train_run(config: TrainConfig, policy: PolicyParams, stream: Sequence[TaskInstance],
              eval_set: Sequence[TaskInstance], eval_every: int, sink: RunWriter | None = None,
              max_flops: float | None = None, eval_seed: int | None = None) -> RunLog:
    """Train over consecutive ``batch_size`` slices of ``stream``.

    Held-out loss is measured before the first step, every ``eval_every``
    steps, and after the final step. With ``max_flops`` the run stops after
    the first step whose cumulative FLOPs reach the budget.
    """
    if eval_every < 1:
        raise ConfigError("eval_every must be >= 1")
    if eval_seed is None:
        eval_seed = config.seed
    state = init_state(policy)
    runlog = RunLog(state=state)

    def emit(rec: StepRecord) -> None:
        runlog.records.append(rec)
        if sink is not None:
            append_record(sink, rec)

    def eval_loss(params: PolicyParams) -> float:
        return evaluate(params, eval_set, config.eval_temperature, eval_seed,
                        config.max_response_len).loss

    emit(StepRecord(step=0, tokens_this_step=0, cumulative_tokens=0, cumulative_flops=0.0,
                    unique_samples_seen=0, train_reward_mean=0.0, mean_response_length=0.0,
                    eval_loss=eval_loss(policy)))
    bs = config.batch_size
    n_batches = (len(stream) + bs - 1) // bs
    for b in range(n_batches):
        batch = list(stream[b * bs:(b + 1) * bs])
        groups, _ = rollout_batch(state, batch, config)
        try:
            state, rec = train_step(state, groups, config)
        except NumericError as exc:
            exc.runlog = runlog
            raise
        runlog.state = state
        over_budget = max_flops is not None and state.cumulative_flops >= max_flops
        last = b == n_batches - 1 or over_budget
        if last or state.step % eval_every == 0:
            rec = replace(rec, eval_loss=eval_loss(state.policy))
        emit(rec)
        if over_budget:
            runlog.stopped_on_budget = True
            break
    return runlog
