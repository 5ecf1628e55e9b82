import sys

import numpy as np
import pytest

from durability.models import FiniteMarkovChain
from durability.presets import birth_death_chain


def skip_chain(n=11, down=0.6, up=0.3, jump=0.1, size=4) -> FiniteMarkovChain:
    """Walk on 0..n-1 (absorbing at the top) with an occasional jump of ``size`` states."""
    P = np.zeros((n, n))
    for i in range(n - 1):
        P[i, max(i - 1, 0)] += down
        P[i, i + 1] += up
        P[i, min(i + size, n - 1)] += jump
    P[n - 1, n - 1] = 1.0
    return FiniteMarkovChain(P.tolist(), list(range(n)), 0)


def two_state() -> FiniteMarkovChain:
    """Deterministic a -> b -> a with z(a) = 0, z(b) = 1."""
    return FiniteMarkovChain([[0.0, 1.0], [1.0, 0.0]], [0.0, 1.0], 0)


class ScriptedSession:
    """Kernel hooks that replay hand-written score sequences.

    Paths are numbered in the order the kernel starts them (depth first); path
    ``k`` reports ``scripts[k]`` one value per step and then holds its last
    value.  Offspring start from their parent's landing score.
    """

    def __init__(self, scripts):
        self.scripts = [list(s) for s in scripts]
        self.path = -1
        self.pos = 0

    def kernel_step(self, model, state, key, ctr):
        script = self.scripts[self.path] if self.path < len(self.scripts) else []
        if self.pos < len(script):
            state[1] = script[self.pos]
        self.pos += 1
        state[0] += 1
        return np.uint64(ctr) + np.uint64(1)

    def kernel_fork(self, model, state, handle, key, ctr):
        self.path += 1
        self.pos = 0
        return 0

    def kernel_snapshot(self, model, state):
        return self.path


@pytest.fixture
def bd6():
    return birth_death_chain(6, 0.12, 0.7)


@pytest.fixture
def python():
    return sys.executable


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
