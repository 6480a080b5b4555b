"""Temporal-pattern backdoor harness for recurrent Q-learning job scheduling.

Subpackages:

- :mod:`drqn_backdoor.triggers` -- trigger constraint language
- :mod:`drqn_backdoor.env` -- partially observable job-scheduling environment
- :mod:`drqn_backdoor.nn` -- from-scratch dense/LSTM engine with BPTT + Adam
- :mod:`drqn_backdoor.agent` -- DRQN acting, replay, and training loop
- :mod:`drqn_backdoor.poison` -- trigger injection and reward-flip gate
- :mod:`drqn_backdoor.metrics` -- CDA / ASR / APR evaluation
- :mod:`drqn_backdoor.cli` -- command-line entry point
"""

from .triggers import (TriggerFormula, TriggerOccurrence, evaluate, parse,
                       parse_file, scan, synthesize_window)
from .env import CloudSchedulingEnv, EnvConfig, JobSpec, VmSpec, generate_jobs
from .agent import AgentConfig, DRQNTrainer, ReplayMemory, Transition
from .config import RunConfig, load_config, make_rngs, substream

__version__ = "0.1.0"
