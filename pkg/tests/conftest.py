from pathlib import Path

import numpy as np
import pytest

from etctraffic.linalg import LtiPlant, PetcLoop, QuadraticTrigger, relative_trigger
from etctraffic.systems import TrafficModel

FIXTURES = Path(__file__).parent / "fixtures"

# Planar plants used throughout: an unstable plant with an anticipated
# controller, and a decoupled plant with one unstable mode.
PLANT_A = LtiPlant([[0, 1], [-2, 3]], [[0], [1]], [[1, -4]])
PLANT_B = LtiPlant([[-0.5, 0], [0, 3.5]], [[1], [1]], [[1.02, -5.62]])
SIGMA = 0.05


def relative_loop(plant, kmax, h=0.01, name="loop"):
    return PetcLoop(plant, QuadraticTrigger(relative_trigger(plant.n, SIGMA), h, kmax), name)


@pytest.fixture(scope="session")
def loop_a():
    return relative_loop(PLANT_A, 40, name="a")


@pytest.fixture(scope="session")
def loop_b():
    return relative_loop(PLANT_B, 20, name="b")


@pytest.fixture(scope="session")
def two_region():
    """Two regions with outputs 2 and 3 and six transitions."""
    edges = [((2,), 1, (2,)), ((2,), 2, (2,)), ((2,), 2, (3,)),
             ((3,), 1, (3,)), ((3,), 2, (3,)), ((3,), 3, (3,))]
    return TrafficModel([(2,), (3,)], edges, kmax=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Verdict lines of the acceptance suite, echoed at the end of the session so
# they show up even when test output is captured.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
