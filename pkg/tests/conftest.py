import numpy as np
import pytest

from maglab.grid import Grid

_ACCEPTANCE = []


def record_acceptance(label, passed, detail):
    """Store one acceptance line; printed again in the terminal summary."""
    line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
    _ACCEPTANCE.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def grid1():
    return Grid.uniform(1, 65)


@pytest.fixture
def grid2():
    return Grid.uniform(2, 24)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
