import sys
from pathlib import Path

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
TRIGGER_DIR = REPO_ROOT / "triggers"

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def trigger_dir():
    return TRIGGER_DIR


def random_formula(rng, max_window=5, max_atoms=6):
    """Random trigger formula for differential testing: a random tree of
    And/Or/Ite combinators over random arithmetic-comparison atoms."""
    from drqn_backdoor import triggers as T

    window_len = int(rng.integers(2, max_window + 1))

    def atom():
        return T.Atom(int(rng.integers(window_len)), int(rng.integers(window_len)),
                      T.ARITH_OPS[int(rng.integers(len(T.ARITH_OPS)))],
                      T.COMPARATORS[int(rng.integers(len(T.COMPARATORS)))],
                      float(np.round(rng.uniform(-5, 5), 3)))

    def build(budget):
        if budget <= 1:
            return atom(), 1
        kind = rng.random()
        if kind < 0.35:
            return atom(), 1
        if kind < 0.85:
            left, n1 = build(budget // 2)
            right, n2 = build(budget - n1)
            cls = T.And if rng.random() < 0.5 else T.Or
            return cls(left, right), n1 + n2
        cond, n1 = build(max(1, budget // 3))
        then, n2 = build(max(1, budget // 3))
        other, n3 = build(max(1, budget - n1 - n2))
        return T.Ite(cond, then, other), n1 + n2 + n3

    n_atoms = int(rng.integers(1, max_atoms + 1))
    root, _ = build(n_atoms)
    return T.TriggerFormula(root=root, window_len=window_len,
                            name=f"rand{int(rng.integers(1e6))}")
