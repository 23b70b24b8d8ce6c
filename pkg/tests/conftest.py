import sys

import numpy as np
import pytest

from quadfail.control import CascadedController, ControllerConfig
from quadfail.equilibrium import solve_hover
from quadfail.params import load_airframe


@pytest.fixture(scope="session")
def airframe():
    return load_airframe()


@pytest.fixture(scope="session")
def vp(airframe):
    return airframe.vehicle


@pytest.fixture(scope="session")
def pp(airframe):
    return airframe.propeller


@pytest.fixture(scope="session")
def spin_hover(vp, pp):
    """Minimum-power spin hover: motor 4 failed, motor 2 off, pair tilted 0.4 rad."""
    return solve_hover(vp, pp, rho=0.0, failed_motor=4)


@pytest.fixture(scope="session")
def published_controller(vp, pp, spin_hover):
    return CascadedController.design(vp, pp, spin_hover, ControllerConfig())


@pytest.fixture(scope="session")
def flight_controller(vp, pp, spin_hover):
    return CascadedController.design(vp, pp, spin_hover, ControllerConfig.flight())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
