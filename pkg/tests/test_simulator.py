import io
import math

import numpy as np
import pytest

from quadfail.model import MotorCommand, RigidBodyState, quat_from_axis_angle, quat_to_rot
from quadfail.simulator import (
    LOG_COLUMNS,
    POS,
    RATES,
    Plant,
    SimConfig,
    SimulationError,
    follow_path,
    near_equilibrium_state,
    pack_state,
    run_closed_loop,
    step,
)

def sim_cfg(flight_controller, start, **kw):
    h = flight_controller.hover
    kw.setdefault("dt", 1e-3)
    return SimConfig(
        vehicle=flight_controller.vehicle,
        propeller=flight_controller.propeller,
        initial_state=near_equilibrium_state(h, start),
        **kw,
    )


def test_free_fall(vp, pp):
    s = RigidBodyState(position=np.array([0.0, 0.0, 100.0]))
    cmd = MotorCommand(np.zeros(4))
    for _ in range(1000):
        s, _ = step(s, cmd, 1e-3, vp, pp, aero=False)
    assert s.position[2] - 100.0 == pytest.approx(-4.905, abs=1e-6)
    assert s.velocity[2] == pytest.approx(-9.81, abs=1e-9)


def test_yaw_drag_decay(vp, pp):
    # I_zz = 5.5e-3 and drag 2.75e-3 give r' = -0.5 r with motors off
    # rotors marked off: the freestream alone would lift the tilted pair and add yaw torque
    s = RigidBodyState(body_rates=np.array([0.0, 0.0, 20.0]))
    cmd = MotorCommand(np.zeros(4), (True, True, True, True))
    for _ in range(1000):
        s, _ = step(s, cmd, 1e-3, vp, pp)
    assert s.body_rates[2] == pytest.approx(20.0 * math.exp(-0.5), rel=1e-6)


def test_torque_free_energy_is_conserved(vp, pp):
    plant = Plant(vp, pp, np.zeros(4, bool), 0.0, aero=False)
    I = np.asarray(vp.inertia) + 4 * np.asarray(vp.prop_inertia)
    x = pack_state(
        RigidBodyState(
            position=np.array([0.0, 0.0, 50.0]),
            velocity=np.array([1.0, -2.0, 3.0]),
            quaternion=quat_from_axis_angle([1, 1, 0], 0.3),
            body_rates=np.array([3.0, -2.0, 5.0]),
        ),
        np.zeros(4),
    )

    def energy(x):
        w = x[RATES]
        return 0.5 * vp.mass * x[3:6] @ x[3:6] + vp.weight * x[2] + 0.5 * w @ (I * w)

    e0 = energy(x)
    for _ in range(10000):
        x = plant.rk4(x, np.zeros(4), 1e-3)
    assert abs(energy(x) - e0) / abs(e0) < 1e-5


def test_open_loop_spin_hover_holds(vp, pp, spin_hover):
    plant = Plant(vp, pp, [True, False, True, False], 0.0)
    x0 = pack_state(near_equilibrium_state(spin_hover, [0, 0, 10]), spin_hover.prop_speeds)
    x = x0.copy()
    for _ in range(2000):
        x = plant.rk4(x, spin_hover.prop_speeds, 1e-3)
    assert np.linalg.norm(x[POS] - x0[POS]) < 0.05
    assert np.linalg.norm(x[RATES] - spin_hover.body_rates) < 0.5


def test_step_rejects_bad_dt(vp, pp):
    with pytest.raises(ValueError):
        step(RigidBodyState(), MotorCommand(np.zeros(4)), 0.0, vp, pp)


def test_non_finite_state_aborts(vp, pp):
    plant = Plant(vp, pp)
    x = pack_state(RigidBodyState(), np.zeros(4))
    x[0] = np.nan
    with pytest.raises(SimulationError):
        plant.rk4(x, np.zeros(4), 1e-3)


def test_motor_lag_follows_first_order(vp, pp):
    s = RigidBodyState(position=np.array([0.0, 0.0, 100.0]))
    cmd = MotorCommand(np.array([-300.0, 300.0, -300.0, 300.0]))
    speeds = np.zeros(4)
    for _ in range(50):
        s, speeds = step(s, cmd, 1e-3, vp, pp, speeds=speeds, motor_time_constant=0.05)
    np.testing.assert_allclose(np.abs(speeds), 300 * (1 - math.exp(-1)), rtol=1e-6)


def test_regulation_at_equilibrium(flight_controller):
    cfg = sim_cfg(flight_controller, [0, 0, 10], duration=10.0, setpoint=np.array([0.0, 0.0, 10.0]))
    log = run_closed_loop(cfg, flight_controller)
    assert not log.diverged
    assert np.max(np.linalg.norm(log.position - [0, 0, 10], axis=1)) < 0.1


def test_log_shape_and_timestamps(flight_controller):
    cfg = sim_cfg(flight_controller, [0, 0, 10], duration=2.0, log_interval=0.02)
    log = run_closed_loop(cfg, flight_controller)
    assert len(log) == 2.0 / 0.02 + 1
    assert np.all(np.diff(log.t) > 0)
    assert np.all(np.isfinite(log.position)) and np.all(np.isfinite(log.power))


def test_settled_yaw_rate_and_power(flight_controller):
    cfg = sim_cfg(flight_controller, [0, 0, 10], duration=5.0, setpoint=np.array([0.0, 0.0, 10.0]))
    log = run_closed_loop(cfg, flight_controller)
    h = flight_controller.hover
    r = log.body_rates[:, 2]
    assert np.all(np.abs(r - h.yaw_rate) <= 0.05 * abs(h.yaw_rate))
    assert log.energy == pytest.approx(h.total_power * 5.0, rel=0.05)


def test_fig5_setpoint_at_control_rate_physics(flight_controller):
    cfg = sim_cfg(flight_controller, [0, 0, 10], duration=30.0, setpoint=np.array([-5.0, 2.0, 16.0]))
    log = run_closed_loop(cfg, flight_controller)
    assert not log.diverged
    err = np.abs(log.position[-1] - [-5, 2, 16])
    assert np.all(err < 0.05 * np.array([5, 2, 6]))


def test_delayed_failure_switches_motor_off(flight_controller):
    cfg = sim_cfg(flight_controller, [0, 0, 10], duration=0.2, failure_time=0.1, log_interval=0.01)
    log = run_closed_loop(cfg, flight_controller)
    assert log.thrusts[log.t < 0.1, 3].max() >= 0.0
    np.testing.assert_array_equal(log.speeds[log.t >= 0.1, 3], 0.0)


def test_controller_failure_mismatch(flight_controller):
    cfg = sim_cfg(flight_controller, [0, 0, 10], duration=0.1, failed_motor=2)
    with pytest.raises(ValueError):
        run_closed_loop(cfg, flight_controller)


def test_single_waypoint_at_current_position_completes(flight_controller):
    cfg = sim_cfg(flight_controller, [0, 0, 10], duration=5.0)
    log = follow_path(cfg, flight_controller, np.array([[0.0, 0.0, 10.0]]))
    assert log.completed
    assert log.t[-1] == 0.0


def test_straight_descent_touches_down_softly(flight_controller):
    cfg = sim_cfg(flight_controller, [0, 0, 30], duration=120.0)
    log = follow_path(cfg, flight_controller, np.array([[0.0, 0.0, 30.0], [0.0, 0.0, 0.0]]))
    assert log.touchdown, log.message
    assert abs(log.velocity[-1, 2]) < 1.0
    assert log.position[-1, 2] <= 0.1
    assert np.linalg.norm(log.position[-1, :2]) < 1.0


def test_waypoint_timeout(flight_controller):
    # starting from rest the vehicle cannot close 0.5 m within 0.3 s
    cfg = sim_cfg(flight_controller, [0, 0, 30], duration=30.0, waypoint_timeout=0.3)
    log = follow_path(cfg, flight_controller, np.array([[0.0, 0.0, 30.0], [100.0, 0.0, 30.0]]))
    assert log.timed_out and not log.completed
    assert "progress" in log.message
    assert log.t[-1] < 1.0


def test_divergence_detector_truncates(flight_controller):
    cfg = sim_cfg(flight_controller, [0, 0, 10], duration=5.0, max_distance=0.5, setpoint=np.array([5.0, 0.0, 10.0]))
    log = run_closed_loop(cfg, flight_controller)
    assert log.diverged
    assert log.t[-1] < 5.0


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(duration=-1.0), dict(failed_motor=5), dict(dt=3e-4)])
def test_sim_config_validation(flight_controller, kw):
    with pytest.raises(ValueError):
        sim_cfg(flight_controller, [0, 0, 10], **kw)


def test_csv_export(flight_controller):
    cfg = sim_cfg(flight_controller, [0, 0, 10], duration=0.1)
    log = run_closed_loop(cfg, flight_controller)
    buf = io.StringIO()
    log.write_csv(buf, ["quadfail test"])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# quadfail test"
    assert lines[1].split(",") == list(LOG_COLUMNS)
    assert len(lines) == 2 + len(log)
    assert all(len(l.split(",")) == len(LOG_COLUMNS) for l in lines[2:])


def test_near_equilibrium_state_points_axis_up(spin_hover):
    s = near_equilibrium_state(spin_hover, [1, 2, 3], yaw_rate_scale=1.1, tilt=math.radians(5))
    n_inertial = quat_to_rot(s.quaternion) @ spin_hover.axis
    assert math.degrees(math.acos(n_inertial[2])) == pytest.approx(5.0)
    assert s.body_rates[2] == pytest.approx(1.1 * spin_hover.yaw_rate)
