import numpy as np
import pytest

from roigan.data import make_phantom_dataset
from roigan.tensor import default_dtype


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


@pytest.fixture(scope="session")
def small_dataset():
    """10 phantom stacks of 8 slices at 64x64 (split 8/1/1)."""
    return make_phantom_dataset(10, (64, 64), 8, seed=3)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for the acceptance summary."""

    def record(n, passed, message):
        line = f"{'PASS' if passed else 'FAIL'} criterion {n}: {message}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
