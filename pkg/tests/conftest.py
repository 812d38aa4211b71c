import numpy as np
import pytest

from paramlearn import ParamCurve, TimeGrid


@pytest.fixture
def grid():
    return TimeGrid(0.0, 1.0, 100)


@pytest.fixture
def beta03():
    return ParamCurve.constant(0.3)


@pytest.fixture
def two_piece():
    return ParamCurve(np.array([0.0, 0.5]), np.array([0.2, 0.5]), 1.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
