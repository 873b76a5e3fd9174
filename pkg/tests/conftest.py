import numpy as np
import pytest

import mvswitch as mv
from mvswitch.model import RegimeCoefficients, TwoTimeScaleModel
from mvswitch.generators import Partition

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cfg61():
    return mv.load_config(mv.bundled_config("example61.cfg"))


@pytest.fixture(scope="session")
def cfg62():
    return mv.load_config(mv.bundled_config("example62.cfg"))


@pytest.fixture(scope="session")
def model61(cfg61):
    return cfg61.model


@pytest.fixture(scope="session")
def model62(cfg62):
    return cfg62.model


def single_regime(r=0.5, B=1.0, sigma=1.0):
    coeffs = RegimeCoefficients(r=[r], B=[B], sigma=[sigma])
    return TwoTimeScaleModel(np.zeros((1, 1)), np.zeros((1, 1)), Partition(((0,),)), coeffs)


def three_state_transient():
    """Two one-state clusters plus one transient state absorbed evenly."""
    fast = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, -2.0]])
    slow = np.array([[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0]])
    coeffs = RegimeCoefficients(r=[0.5, -0.1, 0.2], B=[1.0, -2.0, 1.5], sigma=[1.0, 1.0, 1.0])
    return TwoTimeScaleModel(fast, slow, Partition(((0,), (1,)), transient=(2,)), coeffs)
