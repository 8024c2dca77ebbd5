import numpy as np
import pytest

from esdiffuse.config import bundled_config_path, parse_config
from esdiffuse.driver import initial_state, make_problem
from esdiffuse.selfcheck import random_states, reference_mixture
from esdiffuse.stepper import step

GAS = np.array([7430.2, 673.6])
LIQUID = np.array([6866.3, 4791.5])


@pytest.fixture(scope="session")
def mix():
    return reference_mixture()


@pytest.fixture(scope="session")
def states100(mix):
    return random_states(mix, 100, seed=1234)


@pytest.fixture(scope="session")
def example_cfg():
    return parse_config(bundled_config_path())


class DropletRun:
    def __init__(self, cfg):
        self.cfg = cfg
        self.prob = make_problem(cfg)
        self.states = [initial_state(cfg)]
        self.reports = []
        for _ in range(cfg.run.steps):
            st, rep = step(self.prob, self.states[-1])
            self.states.append(st)
            self.reports.append(rep)


@pytest.fixture(scope="session")
def droplet(example_cfg):
    """The bundled droplet example advanced for its configured 60 steps."""
    return DropletRun(example_cfg)


@pytest.fixture(scope="session")
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the summary."""
    lines = request.config.__dict__.setdefault("_esdiffuse_acceptance", [])

    def record(name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_esdiffuse_acceptance")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
