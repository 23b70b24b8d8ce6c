import numpy as np
import pytest

from quadfail.control import FLIGHT_Q, ControllerConfig
from quadfail.params import ConfigError
from quadfail.scenario import (
    DEFAULT_SEED,
    controller_config,
    design,
    load_scenario,
    plan,
    scenario_from_dict,
)


def test_bundled_landing_scenario():
    b = load_scenario()
    np.testing.assert_array_equal(b.start, [500, 500, 550])
    assert b.world is not None and b.setpoint is None
    assert b.seed == DEFAULT_SEED
    assert b.controller.Q == FLIGHT_Q
    assert set(b.digests) == {"scenario", "vehicle", "map"}
    assert b.header_lines()[1] == f"seed {DEFAULT_SEED}"


def test_bundled_setpoint_scenario():
    b = load_scenario(name="scenario_setpoint.yaml")
    np.testing.assert_array_equal(b.setpoint, [-5, 2, 16])
    np.testing.assert_array_equal(b.start, [0, 0, 10])


def test_weight_presets():
    assert controller_config({"weights": "published"}) == ControllerConfig()
    assert controller_config({}).Q == FLIGHT_Q
    assert controller_config({"weights": "published", "natural_freq": 0.3}).natural_freq == 0.3
    with pytest.raises(ConfigError):
        controller_config({"weights": "aggressive"})
    with pytest.raises(ConfigError):
        controller_config({"Q": [1, 2]})


@pytest.mark.parametrize(
    "data, match",
    [
        ({"setpoint": [0, 0, 1], "turbo": True}, "turbo"),
        ({"setpoint": [0, 0, 1], "planner": {"speed": 3}}, "planner.speed"),
        ({"setpoint": [0, 0]}, "setpoint"),
        ({"start": [0, 0]}, "start"),
        ({}, "setpoint or a map"),
        ({"setpoint": [0, 0, 1], "seed": -1}, "seed"),
        ({"setpoint": [0, 0, 1], "planner": [1, 2]}, "mapping"),
    ],
)
def test_scenario_errors(data, match):
    with pytest.raises(ConfigError, match=match):
        scenario_from_dict(data)


def test_design_uses_requested_tilt():
    b = scenario_from_dict({"setpoint": [0, 0, 10], "hover": {"alpha": 0.0}, "controller": {"weights": "published"}})
    hover, ctrl = design(b)
    assert hover.total_power == pytest.approx(54.0, rel=0.05)
    assert ctrl.config == ControllerConfig()


def test_plan_pipeline_on_bundled_map():
    b = load_scenario()
    result = plan(b)
    assert result.spot.position == (500.0, 101.0, 0.0)
    assert result.planning_world.inflation == b.world.inflation
    np.testing.assert_array_equal(result.path.waypoints[0], b.start)
    np.testing.assert_array_equal(result.path.waypoints[-1], [500, 101, 0])
    assert result.path.total_length <= result.raw.total_length
