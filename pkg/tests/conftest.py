import numpy as np
import pytest

from chebmixer.graph import build_csr
from chebmixer.verify import random_graph

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def p3():
    return build_csr(3, [(0, 1, 1.0), (1, 2, 1.0)])


@pytest.fixture
def k2():
    return build_csr(2, [(0, 1, 1.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_graph():
    return random_graph


@pytest.fixture
def acceptance(request):
    """Record one line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def report(number: int, title: str, passed: bool, detail: str):
        lines.append((number, f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"))
        print(lines[-1][1])

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
