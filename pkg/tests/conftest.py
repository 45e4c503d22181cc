import numpy as np
import pytest

from mflab.data import BinaryLabels, DataModel, UniformSphere, halfspace_probability


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def halfspace_model():
    return DataModel(UniformSphere(2), BinaryLabels(halfspace_probability(0.8, 0.2)), seed=0)


CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""

    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
