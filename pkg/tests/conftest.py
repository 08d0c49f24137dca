import numpy as np
import pytest

from gridbid import bundled, find_equilibrium, load_case, load_scenario, select_spanning_tree
from gridbid.certificates import find_epsilon


class Loaded:
    def __init__(self, name):
        self.network, self.cost, self.gains = load_case(bundled(name))
        self.tree = select_spanning_tree(self.network)
        self.eq = find_equilibrium(self.network, self.tree, self.cost, self.gains)
        self.cert = find_epsilon(self.network, self.tree, self.cost, self.gains, equilibrium=self.eq)

    @property
    def args(self):
        return self.network, self.tree, self.cost, self.gains


@pytest.fixture(scope="session")
def two_bus():
    return Loaded("two_bus.case")


@pytest.fixture(scope="session")
def ieee14():
    return Loaded("ieee14.case")


@pytest.fixture(scope="session")
def load_step_scenario(ieee14):
    return load_scenario(bundled("ieee14_load_step.scenario"), ieee14.network)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
