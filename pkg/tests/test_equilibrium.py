import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadfail.equilibrium import (
    HoverSolution,
    HoverSolveError,
    TuningConfig,
    active_motors,
    argmin_row,
    equilibrium_residual,
    failure_tilts,
    hover_power,
    min_power_search,
    motor_power,
    power_sweep,
    solve_hover,
)
from quadfail.model import propeller_thrust


def tilted(vp, alpha, failed=4, other=0.0):
    return replace(vp, tilt_angles=failure_tilts(failed, alpha, other))


def test_published_spin_hover(spin_hover):
    s = spin_hover
    assert s.prop_speeds[0] == pytest.approx(-499.2, rel=0.01)
    assert s.prop_speeds[2] == s.prop_speeds[0]
    assert s.prop_speeds[1] == 0.0 and s.prop_speeds[3] == 0.0
    assert s.body_rates[2] == pytest.approx(-95.47, rel=0.02)
    np.testing.assert_allclose(s.body_rates[:2], 0.0, atol=1e-9)
    assert s.prop_thrusts[0] == pytest.approx(2.66, rel=0.01)
    np.testing.assert_allclose(s.axis, [0, 0, 1], atol=1e-3)
    assert s.total_power == pytest.approx(44.9, rel=0.02)


def test_residual_at_published_values(vp, pp):
    x = np.array([0, 0, -95.47, 0, 0, 1, 1 / 95.47, -499.2, 0, -499.2, 0])
    assert np.max(np.abs(equilibrium_residual(x, vp, pp, 0.0, 4))) < 1e-2


def test_residual_without_thrust_is_missing_weight(vp, pp):
    x = np.array([0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0], dtype=float)
    res = equilibrium_residual(x, vp, pp, 0.0, 4)
    # weight-balance row is scaled by 1/(m g)
    assert res[7] * vp.weight == pytest.approx(-4.905)


def test_healthy_hover_residual(vp, pp):
    level = replace(vp, tilt_angles=(0.0,) * 4)
    w = math.sqrt(3 * (vp.weight / 4) / (pp.k_lift * pp.blade_radius**3))
    assert w == pytest.approx(437.4, abs=0.1)
    x = np.array([0, 0, 0, 0, 0, 1, 0, -w, w, -w, w])
    res = equilibrium_residual(x, level, pp, 1.0, None)
    assert np.max(np.abs(res)) < 1e-6


def test_symmetric_hover_solve(vp, pp):
    level = replace(vp, tilt_angles=(0.0,) * 4)
    s = solve_hover(level, pp, rho=1.0, failed_motor=None)
    assert s.yaw_rate == pytest.approx(0.0, abs=1e-8)
    np.testing.assert_allclose(s.axis, [0, 0, 1], atol=1e-10)
    np.testing.assert_allclose(np.abs(s.prop_speeds), abs(s.prop_speeds[0]), rtol=1e-9)


def assert_invariants(s: HoverSolution, vp, pp):
    assert np.linalg.norm(s.axis) == pytest.approx(1.0, abs=1e-9)
    total = s.thrust_vectors.sum(axis=0) @ s.axis
    assert total == pytest.approx(vp.weight, rel=1e-6)
    w = s.body_rates
    if np.linalg.norm(w) > 0:
        np.testing.assert_allclose(np.cross(s.axis, w), 0.0, atol=1e-8 * max(1.0, np.linalg.norm(w)))
    assert s.prop_speeds[s.failed_motor - 1] == 0.0
    running = active_motors(s.rho, s.failed_motor)
    f = propeller_thrust(pp, s.prop_speeds, s.yaw_rate, vp.arm_length)
    assert np.all(f[running] >= 0)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([0.0, 0.2, 0.5, 1.0]), st.floats(0.15, 0.45))
def test_returned_solutions_satisfy_invariants(rho, alpha):
    from quadfail.params import load_airframe

    af = load_airframe()
    v = tilted(af.vehicle, alpha)
    try:
        s = solve_hover(v, af.propeller, rho, 4)
    except HoverSolveError:
        return
    assert_invariants(s, v, af.propeller)
    assert np.max(np.abs(equilibrium_residual(s.candidate, v, af.propeller, rho, 4))) < 1e-8
    assert s.prop_speeds[0] < 0 and s.prop_speeds[2] < 0 and s.prop_speeds[1] >= 0


def test_round_trip(spin_hover, vp, pp):
    res = equilibrium_residual(spin_hover.candidate, vp, pp, 0.0, 4)
    assert np.max(np.abs(res)) < 1e-8


def test_power_falls_with_tilt_on_the_rho_zero_row(vp, pp):
    powers = [solve_hover(tilted(vp, a), pp, 0.0, 4).total_power for a in np.arange(0.0, 0.4001, 0.05)]
    assert np.all(np.diff(powers) <= 1e-9)
    assert powers[0] == pytest.approx(54.0, rel=0.05)
    assert powers[-1] == pytest.approx(44.9, rel=0.02)


@pytest.mark.parametrize("failed", [1, 2, 3])
def test_other_failures_are_symmetric_images(vp, pp, spin_hover, failed):
    s = solve_hover(tilted(vp, 0.4, failed), pp, 0.0, failed)
    assert s.total_power == pytest.approx(spin_hover.total_power, rel=1e-8)
    assert s.yaw_rate == pytest.approx(spin_hover.yaw_rate * (1 if failed % 2 == 0 else -1), rel=1e-8)


def test_negative_rho_rejected(vp, pp):
    with pytest.raises(ValueError):
        solve_hover(vp, pp, -0.1, 4)


def test_unreachable_hover_fails_explicitly(vp, pp):
    heavy = replace(vp, mass=50.0)
    with pytest.raises(HoverSolveError) as err:
        solve_hover(heavy, pp, 0.0, 4)
    assert err.value.best_residual > 0


def test_power_examples(spin_hover):
    assert motor_power(0.0169, [1.0], [100.0])[0] == pytest.approx(1.69)
    assert motor_power(0.0169, [0.0, 0.0], [0.0, 0.0]).sum() == 0.0
    assert motor_power(0.0169, [2.663, 2.663], [-499.2, -499.2]).sum() == pytest.approx(44.9, rel=0.02)
    assert hover_power(spin_hover) == pytest.approx(spin_hover.total_power)


@given(st.lists(st.floats(0, 10), min_size=4, max_size=4), st.lists(st.floats(-900, 900), min_size=4, max_size=4))
def test_power_never_negative(f, w):
    assert np.all(motor_power(0.0169, f, w) >= 0)


def test_single_point_grid(vp, pp):
    rho, alpha, sol = min_power_search(vp, pp, TuningConfig(rho_grid=(0.0,), alpha_grid=(0.0,)), 4)
    assert (rho, alpha) == (0.0, 0.0)
    assert sol.total_power == pytest.approx(54.0, rel=0.05)


def test_sweep_rows_are_grid_ordered(vp, pp):
    rows = power_sweep(vp, pp, TuningConfig(rho_grid=(0.0, 0.5), alpha_grid=(0.3, 0.4)), 4)
    assert [(r.rho, r.alpha) for r in rows] == [(0.0, 0.3), (0.0, 0.4), (0.5, 0.3), (0.5, 0.4)]
    best = argmin_row(rows)
    assert best.total_power == min(r.total_power for r in rows)


def test_all_failed_grid_raises():
    with pytest.raises(HoverSolveError):
        argmin_row([])


@pytest.mark.parametrize("bad", [dict(rho_grid=()), dict(alpha_grid=(0.2, 0.1)), dict(rho_grid=(-1.0, 0.0))])
def test_tuning_config_validation(bad):
    with pytest.raises(ValueError):
        TuningConfig(**bad)


def test_solution_serialization(spin_hover, vp):
    back = HoverSolution.from_dict(spin_hover.to_dict(), vp)
    np.testing.assert_array_equal(back.candidate, spin_hover.candidate)
    np.testing.assert_allclose(back.thrust_vectors, spin_hover.thrust_vectors, rtol=1e-12)
