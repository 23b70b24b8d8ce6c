"""Closed-loop nonlinear simulation of the failed-rotor quadcopter."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .control import CascadedController
from .equilibrium import active_motors
from .model import (
    TANGENTIAL,
    RigidBodyState,
    geometry,
    quat_from_axis_angle,
    quat_mul,
    quat_to_rot,
)
from .params import PropellerParams, VehicleParams

# state vector layout
POS, VEL, QUAT, RATES, SPEEDS = slice(0, 3), slice(3, 6), slice(6, 10), slice(10, 13), slice(13, 17)
STATE_SIZE = 17
# distance gain (m) towards the active waypoint that counts as progress
PROGRESS_STEP = 0.5


class SimulationError(RuntimeError):
    pass


class Plant:
    """Rigid body + propellers with first-order motor lag, as one ODE.

    ``motor_time_constant = 0`` gives ideal motors: speeds jump to the
    command at each control tick and the spin-up torque is zero.
    ``aero=False`` drops the asymmetric-lift moments, the reaction torque
    and all drag, leaving thrust, gravity and rigid-body gyroscopics.
    """

    def __init__(
        self,
        vp: VehicleParams,
        pp: PropellerParams,
        active=None,
        motor_time_constant: float | None = None,
        aero: bool = True,
    ):
        self.vp, self.pp = vp, pp
        geo = geometry(vp)
        self.active = np.ones(4, bool) if active is None else active
        self.tau_m = vp.motor_time_constant if motor_time_constant is None else motor_time_constant
        self.aero = aero
        self.D = geo.thrust_dirs.T.copy()
        self.L = np.cross(geo.positions, geo.thrust_dirs).T.copy()
        self.T = vp.prop_moment_sign * TANGENTIAL.T.copy()
        self.inertia = np.asarray(vp.inertia, dtype=float)
        self.ip = np.asarray(vp.prop_inertia, dtype=float)
        self.drag_rot = np.array([vp.rot_drag_xy[0], vp.rot_drag_xy[1], vp.yaw_drag])
        self.drag_lin = np.asarray(vp.linear_drag, dtype=float)
        self.gravity = np.array([0.0, 0.0, -vp.gravity])
        rb = pp.blade_radius
        self._c_spin = pp.k_lift * rb**3 / 3
        self._c_free = pp.k_lift * rb * vp.arm_length**2 / 2
        self._c_mom = pp.k_lift * rb**3 * vp.arm_length / 3
        self._dirs = geo.thrust_dirs.tolist()
        self._levers = np.cross(geo.positions, geo.thrust_dirs).tolist()
        self._tang = (vp.prop_moment_sign * TANGENTIAL).tolist()
        self._inertia = tuple(vp.inertia)
        self._ip = tuple(vp.prop_inertia)
        self._drag_rot = (vp.rot_drag_xy[0], vp.rot_drag_xy[1], vp.yaw_drag)
        self._drag_lin = tuple(vp.linear_drag)
        self._k_tau = vp.reaction_coeff
        self._react_thrust = vp.reaction_along_thrust
        self._m_inv = 1.0 / vp.mass
        self._g = vp.gravity

    @property
    def active(self):
        return self._active_arr

    @active.setter
    def active(self, value):
        self._active_arr = np.asarray(value, bool)
        self._active = tuple(bool(a) for a in self._active_arr)

    def thrusts(self, speeds, r):
        """Thrust magnitudes and asymmetric-lift moments of the running motors."""
        s = speeds + r
        f = self._c_spin * s * s + self._c_free * r * r
        f = np.where(self.active, np.maximum(f, 0.0), 0.0)
        m = np.where(self.active, self._c_mom * r * s, 0.0)
        return f, m

    def wrench(self, omega, speeds):
        """Body-frame force and total torque (including the gyroscopic term)."""
        vp = self.vp
        f, m = self.thrusts(speeds, omega[2])
        force = self.D @ f
        sgn_f = np.sign(speeds) * f
        if vp.reaction_along_thrust:
            reaction = -vp.reaction_coeff * (self.D @ sgn_f)
        else:
            reaction = np.array([0.0, 0.0, -vp.reaction_coeff * sgn_f.sum()])
        h = self.inertia * omega + self.ip * (4 * omega)
        h[2] += self.ip[2] * speeds.sum()
        gyro = np.array(
            [
                omega[1] * h[2] - omega[2] * h[1],
                omega[2] * h[0] - omega[0] * h[2],
                omega[0] * h[1] - omega[1] * h[0],
            ]
        )
        if not self.aero:
            return force, self.L @ f - gyro, f
        torque = self.L @ f + reaction + self.T @ m - self.drag_rot * omega - gyro
        return force, torque, f

    def derivative(self, x, cmd):
        """State derivative; scalar arithmetic because the vectors are tiny."""
        x = x.tolist() if isinstance(x, np.ndarray) else x
        px, py, pz, vx, vy, vz, qw, qx, qy, qz, p, q, r, w1, w2, w3, w4 = x
        speeds = (w1, w2, w3, w4)
        tau_m = self.tau_m
        act = self._active
        if tau_m > 0:
            sdot = [(c - w) / tau_m if a else 0.0 for c, w, a in zip(cmd, speeds, act)]
        else:
            sdot = [0.0, 0.0, 0.0, 0.0]

        cs, cf, cm = self._c_spin, self._c_free, self._c_mom
        free = cf * r * r
        fx = fy = fz = 0.0
        tx = ty = tz = 0.0
        react = 0.0
        for i in range(4):
            if not act[i]:
                continue
            s = speeds[i] + r
            f = cs * s * s + free
            if f < 0.0:
                f = 0.0
            d = self._dirs[i]
            fx += f * d[0]
            fy += f * d[1]
            fz += f * d[2]
            lv = self._levers[i]
            tx += f * lv[0]
            ty += f * lv[1]
            tz += f * lv[2]
            if self.aero:
                m = cm * r * s
                t = self._tang[i]
                tx += m * t[0]
                ty += m * t[1]
                tz += m * t[2]
                w = speeds[i]
                sg = (w > 0) - (w < 0)
                if self._react_thrust:
                    tx -= self._k_tau * sg * f * d[0]
                    ty -= self._k_tau * sg * f * d[1]
                    tz -= self._k_tau * sg * f * d[2]
                else:
                    react -= self._k_tau * sg * f
        ixx, iyy, izz = self._inertia
        ipx, ipy, ipz = self._ip
        hx = (ixx + 4 * ipx) * p
        hy = (iyy + 4 * ipy) * q
        hz = (izz + 4 * ipz) * r + ipz * (w1 + w2 + w3 + w4)
        tx -= q * hz - r * hy
        ty -= r * hx - p * hz
        tz -= p * hy - q * hx + ipz * (sdot[0] + sdot[1] + sdot[2] + sdot[3])
        if self.aero:
            dx, dy, dz = self._drag_rot
            tx -= dx * p
            ty -= dy * q
            tz += react - dz * r

        # body force to inertial
        r00 = 1 - 2 * (qy * qy + qz * qz)
        r01 = 2 * (qx * qy - qw * qz)
        r02 = 2 * (qx * qz + qw * qy)
        r10 = 2 * (qx * qy + qw * qz)
        r11 = 1 - 2 * (qx * qx + qz * qz)
        r12 = 2 * (qy * qz - qw * qx)
        r20 = 2 * (qx * qz - qw * qy)
        r21 = 2 * (qy * qz + qw * qx)
        r22 = 1 - 2 * (qx * qx + qy * qy)
        m_inv = self._m_inv
        kx, ky, kz = self._drag_lin if self.aero else (0.0, 0.0, 0.0)
        return np.array(
            [
                vx,
                vy,
                vz,
                (r00 * fx + r01 * fy + r02 * fz - kx * vx) * m_inv,
                (r10 * fx + r11 * fy + r12 * fz - ky * vy) * m_inv,
                (r20 * fx + r21 * fy + r22 * fz - kz * vz) * m_inv - self._g,
                0.5 * (-qx * p - qy * q - qz * r),
                0.5 * (qw * p + qy * r - qz * q),
                0.5 * (qw * q - qx * r + qz * p),
                0.5 * (qw * r + qx * q - qy * p),
                tx / ixx,
                ty / iyy,
                tz / izz,
                *sdot,
            ]
        )

    def rk4(self, x, cmd, dt):
        cmd = list(cmd)
        k1 = self.derivative(x, cmd)
        k2 = self.derivative(x + 0.5 * dt * k1, cmd)
        k3 = self.derivative(x + 0.5 * dt * k2, cmd)
        k4 = self.derivative(x + dt * k3, cmd)
        out = x + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[QUAT] /= np.linalg.norm(out[QUAT])
        if not np.all(np.isfinite(out)):
            raise SimulationError(f"non-finite state after RK4 step: {out}")
        return out


def pack_state(state: RigidBodyState, speeds=None) -> np.ndarray:
    x = np.zeros(STATE_SIZE)
    x[:13] = state.to_vector()
    if speeds is not None:
        x[SPEEDS] = speeds
    return x


def step(
    state: RigidBodyState,
    cmd,
    dt: float,
    vp: VehicleParams,
    pp: PropellerParams,
    speeds=None,
    motor_time_constant: float = 0.0,
    aero: bool = True,
):
    """One RK4 step. Returns ``(state', speeds')``.

    With the default ideal motors the prop speeds equal ``cmd.prop_speeds``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    active = ~np.asarray(cmd.failed_mask, bool)
    plant = Plant(vp, pp, active, motor_time_constant, aero)
    x = pack_state(state, cmd.prop_speeds if speeds is None or motor_time_constant == 0 else speeds)
    x = plant.rk4(x, cmd.prop_speeds, dt)
    return RigidBodyState.from_vector(x[:13]), x[SPEEDS].copy()


@dataclass
class SimConfig:
    """One simulation scenario.

    Motors are ideal (speed equals command) unless ``motor_lag`` is set, in
    which case they follow a first-order lag with the vehicle's
    ``motor_time_constant``. Waypoints take precedence over ``setpoint``.
    """

    vehicle: VehicleParams
    propeller: PropellerParams
    initial_state: RigidBodyState
    duration: float = 30.0
    dt: float = 1e-4
    control_rate: float = 500.0
    log_interval: float = 0.01
    failed_motor: int = 4
    failure_time: float = 0.0
    setpoint: np.ndarray | None = None
    waypoints: np.ndarray | None = None
    acceptance_radius: float = 10.0
    final_radius: float = 1.0
    motor_lag: bool = False
    initial_speeds: np.ndarray | None = None
    # divergence detector
    max_distance: float = 5000.0
    max_rate: float = 500.0
    # landing
    touchdown_height: float = 0.1
    touchdown_speed: float = 1.0
    landing_height: float = 8.0
    landing_error: float = 1.0
    waypoint_timeout: float = 60.0  # s without getting PROGRESS_STEP closer

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("integrator step must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.failed_motor not in (1, 2, 3, 4):
            raise ValueError("failed_motor must be 1..4")
        ratio = 1.0 / (self.control_rate * self.dt)
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ValueError("control period must be a whole number of integrator steps")
        per_log = self.log_interval * self.control_rate
        if abs(per_log - round(per_log)) > 1e-6 or round(per_log) < 1:
            raise ValueError("log interval must be a whole number of control periods")

    @property
    def motor_time_constant(self) -> float:
        return self.vehicle.motor_time_constant if self.motor_lag else 0.0


LOG_COLUMNS = (
    ["t"]
    + [f"d_{a}" for a in "xyz"]
    + [f"v_{a}" for a in "xyz"]
    + [f"q_{a}" for a in "wxyz"]
    + ["p", "q", "r"]
    + [f"n_{a}" for a in "xyz"]
    + [f"zeta_{i}" for i in range(4)]
    + [f"w_{i}" for i in range(1, 5)]
    + [f"f_{i}" for i in range(1, 5)]
    + [f"P_{i}" for i in range(1, 5)]
    + ["waypoint"]
)


@dataclass
class SimLog:
    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    quaternion: np.ndarray
    body_rates: np.ndarray
    axis: np.ndarray
    zeta: np.ndarray
    speeds: np.ndarray
    thrusts: np.ndarray
    power: np.ndarray
    waypoint: np.ndarray
    energy: float = 0.0
    diverged: bool = False
    touchdown: bool = False
    timed_out: bool = False
    completed: bool = False
    message: str = ""

    def __len__(self):
        return len(self.t)

    @property
    def total_power(self) -> np.ndarray:
        return self.power.sum(axis=1)

    def rows(self):
        for k in range(len(self.t)):
            yield [
                self.t[k],
                *self.position[k],
                *self.velocity[k],
                *self.quaternion[k],
                *self.body_rates[k],
                *self.axis[k],
                *self.zeta[k],
                *self.speeds[k],
                *self.thrusts[k],
                *self.power[k],
                int(self.waypoint[k]),
            ]

    def write_csv(self, fh, header_lines=()):
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in self.rows():
            w.writerow([f"{v:.9g}" if isinstance(v, float) else v for v in row])


class _Recorder:
    def __init__(self):
        self.cols = {k: [] for k in ("t", "pos", "vel", "quat", "rates", "n", "zeta", "w", "f", "P", "wp")}

    def add(self, t, x, n, zeta, f, P, wp):
        c = self.cols
        c["t"].append(t)
        c["pos"].append(x[POS].copy())
        c["vel"].append(x[VEL].copy())
        c["quat"].append(x[QUAT].copy())
        c["rates"].append(x[RATES].copy())
        c["n"].append(np.array(n, dtype=float))
        c["zeta"].append(np.array(zeta, dtype=float))
        c["w"].append(x[SPEEDS].copy())
        c["f"].append(np.array(f, dtype=float))
        c["P"].append(np.array(P, dtype=float))
        c["wp"].append(wp)

    def build(self, **flags) -> SimLog:
        c = self.cols

        def arr(k, width):
            return np.array(c[k], dtype=float).reshape(-1, width)

        return SimLog(
            t=np.array(c["t"], dtype=float),
            position=arr("pos", 3),
            velocity=arr("vel", 3),
            quaternion=arr("quat", 4),
            body_rates=arr("rates", 3),
            axis=arr("n", 3),
            zeta=arr("zeta", 4),
            speeds=arr("w", 4),
            thrusts=arr("f", 4),
            power=arr("P", 4),
            waypoint=np.array(c["wp"], dtype=int),
            **flags,
        )


def near_equilibrium_state(
    hover, position, yaw_rate_scale: float = 1.0, tilt: float = 0.0, tilt_axis=(1.0, 0.0, 0.0)
) -> RigidBodyState:
    """Initial state spinning at ``yaw_rate_scale`` times the hover rate, tilted by ``tilt``.

    The body is oriented so that the hover axis points straight up before
    the tilt is applied.
    """
    n = hover.axis / np.linalg.norm(hover.axis)
    # rotation taking the body axis n onto inertial z
    v = np.cross(n, [0.0, 0.0, 1.0])
    s = np.linalg.norm(v)
    if s < 1e-12:
        q0 = np.array([1.0, 0.0, 0.0, 0.0]) if n[2] > 0 else np.array([0.0, 1.0, 0.0, 0.0])
    else:
        q0 = quat_from_axis_angle(v, math.atan2(s, n[2]))
    q = quat_mul(quat_from_axis_angle(tilt_axis, tilt), q0) if tilt else q0
    return RigidBodyState(
        position=np.asarray(position, dtype=float),
        velocity=np.zeros(3),
        quaternion=q,
        body_rates=yaw_rate_scale * hover.body_rates,
    )


def _simulate(cfg: SimConfig, controller: CascadedController, targets, final_index, landing):
    """Shared loop for setpoint regulation and waypoint following."""
    vp = cfg.vehicle
    if controller.hover.failed_motor != cfg.failed_motor:
        raise ValueError("controller was designed for a different failed motor")
    post_active = active_motors(controller.hover.rho, cfg.failed_motor)
    failed_now = cfg.failure_time <= 0
    plant = Plant(vp, cfg.propeller, post_active if failed_now else np.ones(4, bool), cfg.motor_time_constant)

    x = pack_state(cfg.initial_state, controller.hover.prop_speeds if cfg.initial_speeds is None else cfg.initial_speeds)
    if failed_now:
        x[SPEEDS][~post_active] = 0.0

    steps_per_tick = int(round(1.0 / (cfg.control_rate * cfg.dt)))
    dt_ctrl = 1.0 / cfg.control_rate
    n_ticks = int(round(cfg.duration / dt_ctrl))
    log_every = int(round(cfg.log_interval / dt_ctrl))

    rec = _Recorder()
    wp = 0
    energy = 0.0
    axis = None
    flags = dict(diverged=False, touchdown=False, timed_out=False, completed=False, message="")
    start = x[POS].copy()
    last_progress = 0.0
    best_dist = math.inf

    for k in range(n_ticks + 1):
        t = k * dt_ctrl
        if not failed_now and t >= cfg.failure_time:
            failed_now = True
            plant.active = post_active

        target = targets[wp]
        if landing and wp == final_index and x[POS][2] - target[2] < cfg.landing_height:
            # gentle final descent: limit the vertical error seen by the outer loop
            target = target.copy()
            target[2] = max(target[2], x[POS][2] - cfg.landing_error)
        R = quat_to_rot(x[QUAT])
        alloc, axis, zeta, _ = controller(x[POS], x[VEL], R, x[RATES], target, x[RATES][2], axis)
        cmd = np.where(plant.active, alloc.speeds, 0.0)
        if plant.tau_m == 0:
            x[SPEEDS] = cmd
        f, _ = plant.thrusts(x[SPEEDS], x[RATES][2])
        power = vp.reaction_coeff * f * np.abs(x[SPEEDS])
        logged = k % log_every == 0
        if logged:
            rec.add(t, x, axis, zeta, f, power, wp)

        stop = k == n_ticks
        if landing:
            goal = targets[wp]
            dist = float(np.linalg.norm(x[POS] - goal))
            if dist < best_dist - PROGRESS_STEP:
                best_dist, last_progress = dist, t
            if wp < final_index and dist < cfg.acceptance_radius:
                wp += 1
                best_dist, last_progress = math.inf, t
            elif wp == final_index:
                grounded = goal[2] <= cfg.touchdown_height
                if grounded and x[POS][2] <= goal[2] + cfg.touchdown_height:
                    flags["touchdown"] = abs(x[VEL][2]) <= cfg.touchdown_speed
                    flags["completed"] = True
                    if not flags["touchdown"]:
                        flags["message"] = f"hard landing at {abs(x[VEL][2]):.2f} m/s"
                    stop = True
                elif not grounded and dist < cfg.final_radius:
                    # airborne final waypoint: reaching it ends the flight
                    flags["completed"] = True
                    stop = True
            if not stop and t - last_progress > cfg.waypoint_timeout:
                flags["timed_out"] = True
                flags["message"] = f"no waypoint progress for {cfg.waypoint_timeout:g} s"
                stop = True
        if stop:
            if not logged:
                rec.add(t, x, axis, zeta, f, power, wp)
            break

        energy += power.sum() * dt_ctrl
        try:
            for _ in range(steps_per_tick):
                x = plant.rk4(x, cmd, cfg.dt)
        except SimulationError as exc:
            flags["diverged"] = True
            flags["message"] = str(exc)
            break
        if np.linalg.norm(x[POS] - start) > cfg.max_distance or np.max(np.abs(x[RATES])) > cfg.max_rate:
            flags["diverged"] = True
            flags["message"] = f"divergence detected at t={t + dt_ctrl:.3f} s"
            break
    return rec.build(energy=energy, **flags)


def run_closed_loop(cfg: SimConfig, controller: CascadedController) -> SimLog:
    """Regulate to ``cfg.setpoint`` (or follow ``cfg.waypoints``)."""
    if cfg.waypoints is not None:
        targets = np.asarray(cfg.waypoints, dtype=float).reshape(-1, 3)
        return _simulate(cfg, controller, targets, len(targets) - 1, landing=True)
    sp = cfg.initial_state.position if cfg.setpoint is None else cfg.setpoint
    return _simulate(cfg, controller, np.asarray(sp, dtype=float).reshape(1, 3), 0, landing=False)


def follow_path(cfg: SimConfig, controller: CascadedController, path) -> SimLog:
    """Fly the waypoints of ``path`` (a PlannedPath or an (N, 3) array) and land."""
    pts = np.asarray(getattr(path, "waypoints", path), dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty path")
    # the first waypoint is the start position
    if len(pts) > 1 and np.linalg.norm(pts[0] - cfg.initial_state.position) < cfg.acceptance_radius:
        pts = pts[1:]
    return run_closed_loop(replace(cfg, waypoints=pts), controller)
