import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sphere_points(n, seed=0, radius=1.0):
    g = np.random.default_rng(seed).normal(size=(n, 3))
    return radius * g / np.linalg.norm(g, axis=1, keepdims=True)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
