import numpy as np
import pytest

from gfl.graph import Graph, build_incidence, generate_fc, laplacian, random_csl


@pytest.fixture
def path2():
    return Graph(2, ((0, 1, 1.0),))


@pytest.fixture
def k3():
    return Graph(3, ((0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)))


def small_graphs(count=6, n=6):
    """Half FC, half CSL, fixed seeds."""
    out = [generate_fc(n, s) for s in range(count // 2)]
    out += [random_csl(max(n, 5), s) for s in range(count - count // 2)]
    return out


def lap(g):
    return laplacian(build_incidence(g))


def ihat(n):
    return np.eye(n) - np.ones((n, n)) / n


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
