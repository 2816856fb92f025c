"""Training-compute accounting: ``FLOPs_step = 6 * N * T_step``.

``N`` is the non-embedding parameter count and ``T_step`` the number of
tokens processed in the step. The factor 6 is a 2NT forward pass plus a
4NT backward pass. Every processed token is charged the full 6N, including
tokens that were only generated during rollout. Token counts are exact
integers; FLOPs are stored as float64 (exact while 6*N*T < 2**53).
"""

from __future__ import annotations

from dataclasses import dataclass, field

FORWARD_FACTOR = 2
BACKWARD_FACTOR = 4
FLOPS_PER_PARAM_TOKEN = FORWARD_FACTOR + BACKWARD_FACTOR


def forward_flops(n: int, t: int) -> float:
    return float(FORWARD_FACTOR * n * t)


def backward_flops(n: int, t: int) -> float:
    return float(BACKWARD_FACTOR * n * t)


def step_flops(n: int, t: int) -> float:
    if n < 1:
        raise ValueError(f"parameter count must be >= 1, got {n}")
    if t < 0:
        raise ValueError(f"token count must be >= 0, got {t}")
    return float(FLOPS_PER_PARAM_TOKEN * n * t)


@dataclass
class FlopsLedger:
    n_nonembed: int
    per_step_tokens: list[int] = field(default_factory=list)
    per_step_flops: list[float] = field(default_factory=list)
    cumulative: list[float] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.cumulative[-1] if self.cumulative else 0.0

    @property
    def total_tokens(self) -> int:
        return sum(self.per_step_tokens)

    @property
    def cumulative_tokens(self) -> list[int]:
        out, acc = [], 0
        for t in self.per_step_tokens:
            acc += t
            out.append(acc)
        return out

    def snapshot(self) -> "FlopsLedger":
        return FlopsLedger(self.n_nonembed, list(self.per_step_tokens),
                           list(self.per_step_flops), list(self.cumulative))

    @classmethod
    def from_tokens(cls, n_nonembed: int, tokens) -> "FlopsLedger":
        ledger = cls(n_nonembed)
        for t in tokens:
            ledger = accumulate(ledger, t)
        return ledger


def accumulate(ledger: FlopsLedger, t_step: int) -> FlopsLedger:
    """Append one step in place and return the ledger."""
    f = step_flops(ledger.n_nonembed, t_step)
    ledger.per_step_tokens.append(int(t_step))
    ledger.per_step_flops.append(f)
    ledger.cumulative.append(ledger.total + f)
    return ledger
