import itertools

import numpy as np
import pytest

ACCEPTANCE_LINES = []


def leibniz_det(A):
    """Determinant by the permutation expansion; independent of the package code."""
    A = np.asarray(A, dtype=complex)
    n = A.shape[0]
    total = 0j
    for perm in itertools.permutations(range(n)):
        inversions = sum(perm[i] > perm[j] for i in range(n) for j in range(i + 1, n))
        term = (-1) ** inversions
        for i in range(n):
            term = term * A[i, perm[i]]
        total += term
    return total


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def record_acceptance(name: str, passed: bool, detail: str = ""):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
