import itertools
from functools import reduce

import numpy as np
import pytest


def dense_from_factors(factors):
    """Brute-force CP reconstruction by explicit outer products."""
    n = factors[0].shape[0]
    d = len(factors)
    out = np.zeros((n,) * d)
    for r in range(factors[0].shape[1]):
        out += reduce(np.multiply.outer, [a[:, r] for a in factors])
    return out


def all_indices(d, n):
    """Full grid of 1-based multi-indices in lexicographic order."""
    return np.array(list(itertools.product(range(1, n + 1), repeat=d)), dtype=np.int64)


def random_factors(rng, d, n, R, low=-1.0, high=1.0):
    return [rng.uniform(low, high, (n, R)) for _ in range(d)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list = []


def record(criterion: int, passed: bool, detail: str) -> bool:
    """Log one acceptance line; shown in the terminal summary."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
