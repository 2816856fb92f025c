"""Toy-scale RL post-training scaling experiments.

GRPO on small recurrent policies over synthetic verifiable tasks, with
exact FLOPs accounting, data-reuse schedules, run logs and log-linear
scaling-law fits.
"""

__version__ = "0.1.0"
