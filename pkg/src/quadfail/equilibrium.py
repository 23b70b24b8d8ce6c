"""Spin-hover equilibrium after a rotor failure, hover power, and the
(rho, alpha) line search for the minimum-power configuration.

The unknown vector is ordered ``(p, q, r, n_x, n_y, n_z, sigma, w1, w2, w3, w4)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .model import (
    ModelValidityWarning,
    body_torques,
    geometry,
    gyroscopic_torque,
    motor_forces,
    propeller_moment,
    propeller_thrust,
)
from .params import PropellerParams, VehicleParams

N_UNKNOWNS = 11
SPEED_REF = 500.0  # rad/s, scale of the speed-constraint rows


class HoverSolveError(RuntimeError):
    def __init__(self, message: str, best_residual: float = math.inf, best_candidate=None):
        super().__init__(f"{message} (best scaled residual {best_residual:.3e})")
        self.best_residual = best_residual
        self.best_candidate = best_candidate


def motor_roles(failed_motor: int | None) -> tuple[tuple[int, int], int | None]:
    """0-based (adjacent pair, opposite motor) for a failed motor in 1..4.

    With no failure the pair is (0, 2) and the "opposite" role goes to motor 2.
    """
    if failed_motor is None:
        return (0, 2), 1
    if failed_motor not in (1, 2, 3, 4):
        raise ValueError(f"failed_motor must be 1..4 or None, got {failed_motor}")
    f = failed_motor - 1
    return ((f + 1) % 4, (f + 3) % 4), (f + 2) % 4


def active_motors(rho: float, failed_motor: int | None) -> np.ndarray:
    """Running motors: all but the failed one, and the opposite one when rho = 0."""
    on = np.ones(4, dtype=bool)
    if failed_motor is None:
        if rho == 0:
            on[[1, 3]] = False
        return on
    on[failed_motor - 1] = False
    if rho == 0:
        on[motor_roles(failed_motor)[1]] = False
    return on


def failure_tilts(failed_motor: int | None, alpha_pair: float, alpha_other: float = 0.0):
    """Tilt tuple putting ``alpha_pair`` on the two motors adjacent to the failure.

    The sign follows the pair's spin so that a positive ``alpha_pair`` always
    yaws the body along the pair's spin direction (motor 4 failed: rotors 1, 3
    tilted by +alpha).
    """
    (a, b), o = motor_roles(failed_motor if failed_motor is not None else 4)
    spins = (-1, 1, -1, 1)
    tilts = [0.0] * 4
    tilts[a] = tilts[b] = -spins[a] * alpha_pair
    for i in range(4):
        if i not in (a, b):
            tilts[i] = -spins[i] * alpha_other
    return tuple(tilts)


def equilibrium_residual(
    candidate,
    vp: VehicleParams,
    pp: PropellerParams,
    rho: float,
    failed_motor: int | None = 4,
) -> np.ndarray:
    """Scaled residual of the 11 hover equations; all zero at an equilibrium.

    Rows: torque balance (3, scaled by 1/(m g l)), n parallel to w with
    sigma = 1/|w| (3), |n| = 1, weight balance along n (scaled by 1/(m g)),
    and the three speed constraints (failed motor off, adjacent pair equal,
    opposite speed ratio sqrt(rho)).
    """
    x = np.asarray(candidate, dtype=float)
    w, n, sigma, speeds = x[0:3], x[3:6], x[6], x[7:11]
    mg = vp.weight
    on = active_motors(rho, failed_motor)

    res = np.empty(N_UNKNOWNS)
    torque = body_torques(vp, pp, w, speeds, on) - gyroscopic_torque(vp, w, speeds)
    res[0:3] = torque / (mg * vp.arm_length)

    _, forces = motor_forces(vp, pp, speeds, w[2], on)
    total = forces.sum(axis=0)
    if failed_motor is None:
        # non-spinning hover: the axis is the thrust direction, sigma is free when w = 0
        t_norm = np.linalg.norm(total)
        res[3:6] = n - (total / t_norm if t_norm > 0 else np.array([0.0, 0.0, 1.0]))
        wn = np.linalg.norm(w)
        res[6] = wn * (sigma * wn - 1.0)
    else:
        eps = 1.0 if float(n @ w) >= 0 else -1.0
        res[3:6] = n - eps * sigma * w
        res[6] = np.linalg.norm(n) - 1.0
    res[7] = (total @ n - mg) / mg

    (a, b), o = motor_roles(failed_motor)
    s_o = vp.spin_dirs[o]
    if failed_motor is None:
        res[8] = (speeds[a] - speeds[b]) / SPEED_REF
        res[9] = (speeds[o] - speeds[(o + 2) % 4]) / SPEED_REF
    else:
        res[8] = speeds[failed_motor - 1] / SPEED_REF
        res[9] = (speeds[a] - speeds[b]) / SPEED_REF
    # rho = (w_o / w_a)^2 on the physical branch sign(w_o) = s_o
    res[10] = (s_o * math.sqrt(max(rho, 0.0)) * abs(speeds[a]) - speeds[o]) / SPEED_REF
    return res


def numerical_jacobian(fun, x, rel_step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    f0 = fun(x)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (fun(xp) - fun(xm)) / (2 * h)
    return jac


def newton_solve(fun, x0, tol: float = 1e-10, max_iter: int = 200):
    """Damped Newton with backtracking on |F|_2 and least-squares steps.

    Returns ``(x, residual_inf_norm, converged)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    f = fun(x)
    best = (np.max(np.abs(f)), x.copy())
    for _ in range(max_iter):
        err = np.max(np.abs(f))
        if err < best[0]:
            best = (err, x.copy())
        if err < tol:
            return x, err, True
        jac = numerical_jacobian(fun, x)
        step = np.linalg.lstsq(jac, -f, rcond=None)[0]
        norm0 = np.linalg.norm(f)
        lam = 1.0
        while lam > 1e-6:
            trial = x + lam * step
            f_trial = fun(trial)
            if np.all(np.isfinite(f_trial)) and np.linalg.norm(f_trial) < (1 - 1e-4 * lam) * norm0:
                break
            lam *= 0.5
        else:
            # stalled; take the full step once and let the outer loop judge
            trial = x + step
            f_trial = fun(trial)
            if not np.all(np.isfinite(f_trial)):
                break
        x, f = trial, f_trial
    err = np.max(np.abs(f))
    if err < best[0]:
        best = (err, x.copy())
    return best[1], best[0], best[0] < tol


@dataclass
class HoverSolution:
    body_rates: np.ndarray
    axis: np.ndarray
    sigma: float
    prop_speeds: np.ndarray
    prop_thrusts: np.ndarray  # magnitudes, N
    thrust_vectors: np.ndarray  # (4, 3) body frame, N
    prop_moments: np.ndarray  # signed asymmetric-lift moments, N m
    motor_power: np.ndarray  # W
    total_power: float
    rho: float
    tilt_angles: tuple[float, float, float, float]
    failed_motor: int | None
    residual: float = 0.0
    iterations_note: str = ""
    vehicle: VehicleParams | None = field(default=None, repr=False)

    @property
    def candidate(self) -> np.ndarray:
        return np.concatenate([self.body_rates, self.axis, [self.sigma], self.prop_speeds])

    @property
    def yaw_rate(self) -> float:
        return float(self.body_rates[2])

    def to_dict(self) -> dict:
        return {
            "body_rates": self.body_rates.tolist(),
            "axis": self.axis.tolist(),
            "sigma": float(self.sigma),
            "prop_speeds": self.prop_speeds.tolist(),
            "prop_thrusts": self.prop_thrusts.tolist(),
            "prop_moments": self.prop_moments.tolist(),
            "motor_power": self.motor_power.tolist(),
            "total_power": float(self.total_power),
            "rho": float(self.rho),
            "tilt_angles": list(self.tilt_angles),
            "failed_motor": self.failed_motor,
            "residual": float(self.residual),
        }

    @classmethod
    def from_dict(cls, d: dict, vehicle: VehicleParams | None = None) -> HoverSolution:
        thrusts = np.array(d["prop_thrusts"], dtype=float)
        vectors = None
        if vehicle is not None:
            vectors = thrusts[:, None] * geometry(vehicle).thrust_dirs
        return cls(
            body_rates=np.array(d["body_rates"], dtype=float),
            axis=np.array(d["axis"], dtype=float),
            sigma=float(d["sigma"]),
            prop_speeds=np.array(d["prop_speeds"], dtype=float),
            prop_thrusts=thrusts,
            thrust_vectors=vectors,
            prop_moments=np.array(d["prop_moments"], dtype=float),
            motor_power=np.array(d["motor_power"], dtype=float),
            total_power=float(d["total_power"]),
            rho=float(d["rho"]),
            tilt_angles=tuple(d["tilt_angles"]),
            failed_motor=d["failed_motor"],
            residual=float(d.get("residual", 0.0)),
            vehicle=vehicle,
        )


def motor_power(k_tau: float, thrusts, speeds) -> np.ndarray:
    """Per-motor hover power, -sign(w) k_tau |f| w = k_tau |f| |w|."""
    return k_tau * np.abs(np.asarray(thrusts, dtype=float)) * np.abs(np.asarray(speeds, dtype=float))


def hover_power(solution: HoverSolution, k_tau: float | None = None) -> float:
    if k_tau is None:
        k_tau = solution.vehicle.reaction_coeff
    return float(motor_power(k_tau, solution.prop_thrusts, solution.prop_speeds).sum())


def _planar_guesses(vp, pp, rho, failed_motor):
    """Initial guesses from a yaw-only reduction (n = z, p = q = 0).

    For each yaw rate the pair speed is fixed by weight balance; roots of
    the remaining yaw-torque balance are bracketed on a coarse r grid.
    """
    (a, b), o = motor_roles(failed_motor)
    mg = vp.weight
    s_a, s_o = vp.spin_dirs[a], vp.spin_dirs[o]
    root_rho = math.sqrt(max(rho, 0.0))
    failed_idx = None if failed_motor is None else failed_motor - 1
    on = active_motors(rho, failed_motor)

    def speeds_for(mag, r):
        s = np.zeros(4)
        s[a] = s[b] = s_a * mag
        s[o] = s_o * root_rho * mag
        if failed_idx is None:
            s[(o + 2) % 4] = s[o]
        return s

    def lift(mag, r):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ModelValidityWarning)
            _, forces = motor_forces(vp, pp, speeds_for(mag, r), r, on)
        return forces.sum(axis=0)[2] - mg

    def pair_speed(r):
        # unclamped vertical lift is quadratic in the pair speed magnitude
        dirs_z = geometry(vp).thrust_dirs[:, 2] * on

        def raw(mag):
            return float(propeller_thrust(pp, speeds_for(mag, r), r, vp.arm_length) @ dirs_z) - mg

        c0, c1, c2 = raw(0.0), raw(1.0), raw(2.0)
        qa = (c2 - 2 * c1 + c0) / 2
        qb = c1 - c0 - qa
        disc = qb * qb - 4 * qa * c0
        if qa <= 0 or disc < 0:
            return None
        mag = (-qb + math.sqrt(disc)) / (2 * qa)
        return mag if mag > 0 else None

    def yaw(r):
        mag = pair_speed(r)
        if mag is None:
            return None
        s = speeds_for(mag, r)
        w = np.array([0.0, 0.0, r])
        return (body_torques(vp, pp, w, s, on) - gyroscopic_torque(vp, w, s))[2]

    grid = np.linspace(-200.5, 200.5, 101)
    vals = [yaw(r) for r in grid]
    roots = []
    for k in range(len(grid) - 1):
        v0, v1 = vals[k], vals[k + 1]
        if v0 is None or v1 is None:
            continue
        if v0 == 0 or v0 * v1 < 0:
            roots.append(brentq(lambda r: yaw(r), grid[k], grid[k + 1], xtol=1e-10))
    if failed_motor is None:
        roots.append(0.0)
    guesses = []
    for r in roots:
        mag = pair_speed(r)
        sigma = 1.0 / max(abs(r), 1e-3) if failed_motor is not None else 0.0
        guesses.append(np.concatenate([[0.0, 0.0, r], [0.0, 0.0, 1.0], [sigma], speeds_for(mag, r)]))
    # extra multi-start seeds on the branch where r follows the pair's spin
    for r in (-150.0, -100.0, -60.0, -20.0):
        r = r * -s_a if failed_motor is not None else r
        mag = pair_speed(r) or 500.0
        guesses.append(np.concatenate([[0.0, 0.0, r], [0.0, 0.0, 1.0], [1 / abs(r)], speeds_for(mag, r)]))
    return guesses


def _package(x, vp, pp, rho, failed_motor, err) -> HoverSolution:
    w, n, sigma, speeds = x[0:3], x[3:6], float(x[6]), x[7:11].copy()
    on = active_motors(rho, failed_motor)
    speeds[~on] = 0.0
    mags, forces = motor_forces(vp, pp, speeds, w[2], on)
    moments = np.where(on, propeller_moment(pp, speeds, w[2], vp.arm_length), 0.0)
    power = motor_power(vp.reaction_coeff, mags, speeds)
    return HoverSolution(
        body_rates=w.copy(),
        axis=n.copy(),
        sigma=sigma,
        prop_speeds=speeds,
        prop_thrusts=mags,
        thrust_vectors=forces,
        prop_moments=moments,
        motor_power=power,
        total_power=float(power.sum()),
        rho=rho,
        tilt_angles=tuple(vp.tilt_angles),
        failed_motor=failed_motor,
        residual=err,
        vehicle=vp,
    )


def solve_hover(
    vp: VehicleParams,
    pp: PropellerParams,
    rho: float = 0.0,
    failed_motor: int | None = 4,
    initial_guess=None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> HoverSolution:
    """Solve the hover equations; tilt angles are taken from ``vp``.

    Raises HoverSolveError when no start converges to a physical solution
    (non-negative blade-element thrust on every running motor, the
    surviving pair turning in its own spin direction, and every speed
    within ``max_prop_speed``).
    """
    if rho < 0:
        raise ValueError("rho must be non-negative")

    def fun(x):
        return equilibrium_residual(x, vp, pp, rho, failed_motor)

    starts = [] if initial_guess is None else [np.asarray(initial_guess, dtype=float)]
    starts += _planar_guesses(vp, pp, rho, failed_motor)

    (a, _), _o = motor_roles(failed_motor)
    best_err, best_x = math.inf, None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelValidityWarning)
        for x0 in starts:
            x, err, ok = newton_solve(fun, x0, tol=tol, max_iter=max_iter)
            if err < best_err:
                best_err, best_x = err, x
            if not ok:
                continue
            speeds = x[7:11]
            raw = propeller_thrust(pp, speeds, x[2], vp.arm_length)
            running = active_motors(rho, failed_motor)
            if np.any(raw[running] < 0):
                continue
            if np.sign(speeds[a]) != vp.spin_dirs[a]:
                continue
            if np.any(np.abs(speeds[running]) > vp.max_prop_speed):
                # branches beyond the actuator limit are not hover solutions
                continue
            return _package(x, vp, pp, rho, failed_motor, err)
    raise HoverSolveError("hover solve did not converge", best_err, best_x)


@dataclass(frozen=True)
class TuningConfig:
    rho_grid: tuple[float, ...] = tuple(np.round(np.arange(0.0, 1.0001, 0.1), 10))
    alpha_grid: tuple[float, ...] = tuple(np.round(np.arange(0.0, 0.4001, 0.05), 10))
    alpha_other: float = 0.0

    def __post_init__(self):
        for name in ("rho_grid", "alpha_grid"):
            g = np.asarray(getattr(self, name), dtype=float)
            if g.size == 0 or not np.all(np.isfinite(g)) or np.any(np.diff(g) < 0):
                raise ValueError(f"{name} must be non-empty, finite and sorted")
        if min(self.rho_grid) < 0:
            raise ValueError("rho grid must be non-negative")


@dataclass
class SweepRow:
    rho: float
    alpha: float
    converged: bool
    solution: HoverSolution | None

    @property
    def total_power(self) -> float:
        return self.solution.total_power if self.solution else math.nan


def power_sweep(
    vp: VehicleParams, pp: PropellerParams, tuning: TuningConfig, failed_motor: int = 4
) -> list[SweepRow]:
    """Solve the hover at every grid point, ordered rho-major then alpha."""
    rows = []
    for rho in tuning.rho_grid:
        warm = None
        for alpha in tuning.alpha_grid:
            v = replace(vp, tilt_angles=failure_tilts(failed_motor, alpha, tuning.alpha_other))
            try:
                sol = solve_hover(v, pp, rho, failed_motor, initial_guess=warm)
            except HoverSolveError:
                rows.append(SweepRow(rho, alpha, False, None))
                continue
            warm = sol.candidate
            rows.append(SweepRow(rho, alpha, True, sol))
    return rows


def argmin_row(rows: list[SweepRow]) -> SweepRow:
    """Minimum power; ties by smaller |alpha|, then smaller rho."""
    ok = [r for r in rows if r.converged]
    if not ok:
        raise HoverSolveError("no grid point converged")
    return min(ok, key=lambda r: (round(r.total_power, 9), abs(r.alpha), r.rho))


def min_power_search(
    vp: VehicleParams, pp: PropellerParams, tuning: TuningConfig, failed_motor: int = 4
) -> tuple[float, float, HoverSolution]:
    best = argmin_row(power_sweep(vp, pp, tuning, failed_motor))
    return best.rho, best.alpha, best.solution
