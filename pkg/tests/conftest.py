import sys

import numpy as np
import pytest

from sclab.models import Field, FluxModel, NoiseModel, TorusGrid


@pytest.fixture
def grid64():
    return TorusGrid(1, 64)


@pytest.fixture
def burgers():
    return FluxModel.burgers()


@pytest.fixture
def sine64(grid64):
    return Field.from_function(grid64, lambda x: 0.5 + 0.5 * np.sin(2 * np.pi * x))


@pytest.fixture
def trig3():
    return NoiseModel.trigonometric(3, 0.5, q=1.0, b0=1.0, b1=0.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
