"""Reduced-attitude LQR about the spin hover, plus the outer position loop
and thrust allocation of the cascaded controller."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import yaml

from .equilibrium import HoverSolution, active_motors, motor_roles
from .model import (
    ModelValidityWarning,
    body_torques,
    gyroscopic_torque,
    n_vector_dynamics,
    RADIAL,
    E_Z,
)
from .params import PropellerParams, VehicleParams


class ControlDesignError(RuntimeError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    Q: tuple[float, float, float, float] = (10.0, 1.0, 20.0, 20.0)
    R: tuple[float, float] = (5.0, 1.0)
    damping: float = 0.65
    natural_freq: float = 0.8  # rad/s
    collective: bool = True
    # outer-loop saturation keeps the commanded tilt inside the linear region
    max_position_error: float = 5.0  # m, norm clip of d - d_des
    max_tilt: float = 0.25  # rad, between commanded axis and vertical
    max_accel_z: float = 3.0  # m/s^2

    def __post_init__(self):
        if min(self.Q) < 0:
            raise ValueError("Q must be positive semidefinite")
        if min(self.R) <= 0:
            raise ValueError("R must be positive definite")
        if not 0 < self.damping <= 1:
            raise ValueError("damping ratio must lie in (0, 1]")
        if self.natural_freq <= 0:
            raise ValueError("natural frequency must be positive")
        if len(self.Q) != 4 or len(self.R) != 2:
            raise ValueError("Q needs 4 and R needs 2 diagonal entries")

    @classmethod
    def flight(cls, **overrides) -> ControllerConfig:
        """Published outer loop with heavier axis weights on the inner loop.

        The published weights leave the slowest inner pole near -0.23 1/s,
        slower than the 0.8 rad/s outer loop, and the cascade limit-cycles.
        Weighting n_x, n_y at 5000 moves that pole past -5 1/s.
        """
        return cls(**{"Q": FLIGHT_Q, **overrides})


FLIGHT_Q = (1.0, 1.0, 5000.0, 5000.0)


@dataclass
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    zeta_bar: np.ndarray
    # inputs used by the design; None means all columns of B
    input_mask: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if self.input_mask is None:
            self.input_mask = np.ones(self.B.shape[1], dtype=bool)
        self.input_mask = np.asarray(self.input_mask, dtype=bool)

    @property
    def B_active(self) -> np.ndarray:
        return self.B[:, self.input_mask]


def reduced_attitude_rates(vp, pp, hover: HoverSolution, zeta) -> np.ndarray:
    """d/dt (p, q, n_x, n_y) with yaw rate and prop speeds frozen at the hover."""
    p, q, nx, ny = zeta
    nz = math.sqrt(max(1.0 - nx * nx - ny * ny, 0.0))
    if hover.axis[2] < 0:
        nz = -nz
    w = np.array([p, q, hover.body_rates[2]])
    speeds = hover.prop_speeds
    on = active_motors(hover.rho, hover.failed_motor)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelValidityWarning)
        wdot = (body_torques(vp, pp, w, speeds, on) - gyroscopic_torque(vp, w, speeds)) / np.asarray(
            vp.inertia
        )
    ndot = n_vector_dynamics(w, np.array([nx, ny, nz]))
    return np.array([wdot[0], wdot[1], ndot[0], ndot[1]])


def input_matrix(vp: VehicleParams, failed_motor: int | None = 4) -> np.ndarray:
    """B of the reduced model: u1 = df_b - df_a on the adjacent pair, u2 = df_o.

    Each column is the roll/pitch acceleration of a unit input under the
    allocation that keeps total thrust fixed. For motor 4 failed this is
    (l / I_xx) [[0, 1], [1, 0], [0, 0], [0, 0]].
    """
    (a, b), o = motor_roles(failed_motor if failed_motor is not None else 4)
    lever = np.cross(vp.arm_length * RADIAL, E_Z)  # roll/pitch torque per unit thrust
    col1 = 0.5 * (lever[b] - lever[a])
    col2 = lever[o] - 0.5 * (lever[a] + lever[b])
    inv_i = 1.0 / np.asarray(vp.inertia[:2])
    B = np.zeros((4, 2))
    B[:2, 0] = col1[:2] * inv_i
    B[:2, 1] = col2[:2] * inv_i
    B[np.abs(B) < 1e-15] = 0.0
    return B


def linearize_reduced(
    vp: VehicleParams, pp: PropellerParams, hover: HoverSolution, step: float = 1e-6
) -> LinearModel:
    zeta_bar = np.array([hover.body_rates[0], hover.body_rates[1], hover.axis[0], hover.axis[1]])
    A = np.empty((4, 4))
    for j in range(4):
        h = step * max(1.0, abs(zeta_bar[j]))
        e = np.zeros(4)
        e[j] = h
        A[:, j] = (
            reduced_attitude_rates(vp, pp, hover, zeta_bar + e)
            - reduced_attitude_rates(vp, pp, hover, zeta_bar - e)
        ) / (2 * h)
    if not np.all(np.isfinite(A)):
        raise ControlDesignError("non-finite entries in the reduced-attitude Jacobian")
    mask = active_motors(hover.rho, hover.failed_motor)
    _, o = motor_roles(hover.failed_motor if hover.failed_motor is not None else 4)
    input_mask = np.array([True, bool(mask[o])])
    return LinearModel(A, input_matrix(vp, hover.failed_motor), zeta_bar, input_mask)


def riccati_residual(A, B, Q, R, P) -> np.ndarray:
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q


def solve_care(A, B, Q, R, refine: int = 3) -> np.ndarray:
    """Stabilizing CARE solution: Schur method, then Newton-Kleinman refinement."""
    try:
        P = scipy.linalg.solve_continuous_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ControlDesignError(f"Riccati solve failed: {exc}") from exc
    for _ in range(refine):
        K = np.linalg.solve(R, B.T @ P)
        Acl = A - B @ K
        # Lyapunov step: Acl^T X + X Acl = -(Q + K^T R K)
        X = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        X = 0.5 * (X + X.T)
        if np.max(np.abs(riccati_residual(A, B, Q, R, X))) < np.max(
            np.abs(riccati_residual(A, B, Q, R, P))
        ):
            P = X
    return 0.5 * (P + P.T)


def lqr_gain(model: LinearModel, cfg: ControllerConfig, use_all_inputs: bool = False):
    """LQR gain ``K`` (2x4) and Riccati solution ``P``.

    Inputs switched off in the hover (the opposite motor at rho = 0) are left
    out of the design and get a zero row in K, unless ``use_all_inputs``.
    """
    m, n = model.B.shape[1], model.A.shape[0]
    mask = np.ones(m, bool) if use_all_inputs else model.input_mask
    B = model.B[:, mask]
    Q = np.diag(np.asarray(cfg.Q, dtype=float)[:n])
    R = np.diag(np.asarray(cfg.R, dtype=float)[:m][mask])
    P = solve_care(model.A, B, Q, R)
    K_active = np.linalg.solve(R, B.T @ P)
    if np.max(np.linalg.eigvals(model.A - B @ K_active).real) >= 0:
        raise ControlDesignError("(A, B) not stabilizable: closed loop has a non-negative eigenvalue")
    K = np.zeros((m, n))
    K[mask] = K_active
    return K, P


def inner_decay_rate(model: LinearModel, K) -> float:
    """Slowest closed-loop decay rate -max Re(eig(A - BK)) of the inner loop."""
    return float(-np.max(np.linalg.eigvals(model.A - model.B @ K).real))


def cascade_separation(controller: CascadedController) -> float:
    """Inner-loop decay rate divided by the outer-loop natural frequency."""
    return inner_decay_rate(controller.model, controller.K) / controller.config.natural_freq


def position_outer_loop(d, d_dot, d_des, cfg: ControllerConfig, d_dot_des=None) -> np.ndarray:
    """Desired acceleration of a critically shaped second-order position response."""
    err = np.asarray(d, dtype=float) - np.asarray(d_des, dtype=float)
    vel_err = np.asarray(d_dot, dtype=float)
    if d_dot_des is not None:
        vel_err = vel_err - d_dot_des
    wn = cfg.natural_freq
    return -2 * cfg.damping * wn * vel_err - wn**2 * err


def desired_axis(acc_des, gravity: float, R, thrust_projection: float, mass: float, previous=None):
    """Unit axis, in the body frame, along which the thrust must point."""
    total = np.asarray(acc_des, dtype=float) + np.array([0.0, 0.0, gravity])
    vec = mass * (np.asarray(R).T @ total) / thrust_projection
    norm = np.linalg.norm(vec)
    if norm < 1e-9:
        if previous is None:
            raise ValueError("degenerate total acceleration and no previous axis")
        return np.asarray(previous, dtype=float)
    return vec / norm


def thrust_to_speed(pp: PropellerParams, f: float, r: float, arm: float, spin: int):
    """Invert the blade-element thrust for a prop speed with sign ``spin``.

    Returns ``(speed, clamped)``; unreachable thrusts are clamped to the
    nearest achievable speed on the correct spin branch.
    """
    rb = pp.blade_radius
    k = pp.k_lift
    free = rb * r * r * arm * arm / 2
    disc = (f / k - free) * 3 / rb**3
    if disc < 0:
        # below the freestream-only thrust: slowest admissible speed
        w = -r if np.sign(-r) == spin else 0.0
        return w, True
    w = -r + spin * math.sqrt(disc)
    if np.sign(w) != spin:
        return 0.0, True
    return w, False


@dataclass
class Allocation:
    thrusts: np.ndarray
    speeds: np.ndarray
    clamped: bool


def allocate_thrusts(
    u,
    hover: HoverSolution,
    pp: PropellerParams | None = None,
    vp: VehicleParams | None = None,
    yaw_rate: float | None = None,
    collective: float = 1.0,
) -> Allocation:
    """Per-motor thrusts (and speeds, when ``pp``/``vp`` are given) for inputs ``u``.

    ``u[0]`` is the signed differential thrust df_b - df_a of the pair next
    to the failed motor, ``u[1]`` the signed df_o of the opposite motor; the
    sum of the deviations is zero. ``collective`` scales the hover thrusts.
    """
    (a, b), o = motor_roles(hover.failed_motor if hover.failed_motor is not None else 4)
    on = active_motors(hover.rho, hover.failed_motor)
    u1 = float(u[0])
    u2 = float(u[1]) if on[o] else 0.0
    delta = np.zeros(4)
    delta[a] = -0.5 * u1 - 0.5 * u2
    delta[b] = 0.5 * u1 - 0.5 * u2
    delta[o] = u2
    if collective == 1.0 and u1 == 0.0 and u2 == 0.0:
        thrusts = hover.prop_thrusts.copy()
    else:
        thrusts = collective * hover.prop_thrusts + delta
    thrusts[~on] = 0.0
    clamped = bool(np.any(thrusts < 0))
    thrusts = np.maximum(thrusts, 0.0)
    if pp is None or vp is None:
        return Allocation(thrusts, np.full(4, np.nan), clamped)
    r = hover.body_rates[2] if yaw_rate is None else yaw_rate
    speeds = np.zeros(4)
    for i in np.flatnonzero(on):
        w, c = thrust_to_speed(pp, thrusts[i], r, vp.arm_length, vp.spin_dirs[i])
        if abs(w) > vp.max_prop_speed:
            w, c = math.copysign(vp.max_prop_speed, w), True
        speeds[i] = w
        clamped |= c
    return Allocation(thrusts, speeds, clamped)


@dataclass
class CascadedController:
    """Outer position loop -> desired axis -> reduced-attitude LQR -> allocation."""

    vehicle: VehicleParams
    propeller: PropellerParams
    hover: HoverSolution
    config: ControllerConfig
    K: np.ndarray
    P: np.ndarray | None = None
    model: LinearModel | None = None

    @classmethod
    def design(cls, vp, pp, hover: HoverSolution, cfg: ControllerConfig | None = None):
        cfg = cfg or ControllerConfig()
        model = linearize_reduced(vp, pp, hover)
        K, P = lqr_gain(model, cfg)
        return cls(vp, pp, hover, cfg, K, P, model)

    @property
    def thrust_projection(self) -> float:
        return float(self.hover.thrust_vectors.sum(axis=0) @ self.hover.axis)

    def desired_acceleration(self, position, velocity, setpoint) -> np.ndarray:
        cfg = self.config
        err = np.asarray(position, dtype=float) - setpoint
        size = np.linalg.norm(err)
        if size > cfg.max_position_error:
            # shrink along the error so the vehicle heads straight for the setpoint
            err = err * (cfg.max_position_error / size)
        acc = position_outer_loop(err, velocity, np.zeros(3), cfg)
        acc[2] = np.clip(acc[2], -cfg.max_accel_z, cfg.max_accel_z)
        g = self.vehicle.gravity
        horiz = np.linalg.norm(acc[:2])
        limit = (g + acc[2]) * math.tan(cfg.max_tilt)
        if horiz > limit:
            acc[:2] *= limit / horiz
        return acc

    def __call__(self, position, velocity, R, body_rates, setpoint, yaw_rate=None, prev_axis=None):
        """Prop speed commands and diagnostics for one control tick."""
        vp = self.vehicle
        acc = self.desired_acceleration(position, velocity, setpoint)
        n = desired_axis(acc, vp.gravity, R, self.thrust_projection, vp.mass, prev_axis)
        zeta = np.array([body_rates[0], body_rates[1], n[0], n[1]])
        zeta_err = zeta - self.model.zeta_bar
        u = -self.K @ zeta_err
        collective = 1.0
        if self.config.collective:
            collective = vp.mass * np.linalg.norm(acc + np.array([0.0, 0.0, vp.gravity])) / self.thrust_projection
        alloc = allocate_thrusts(u, self.hover, self.propeller, vp, yaw_rate, collective)
        return alloc, n, zeta, u

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "controller": {
                "Q": list(cfg.Q),
                "R": list(cfg.R),
                "damping": cfg.damping,
                "natural_freq": cfg.natural_freq,
                "collective": cfg.collective,
                "max_position_error": cfg.max_position_error,
                "max_tilt": cfg.max_tilt,
                "max_accel_z": cfg.max_accel_z,
            },
            "K": self.K.tolist(),
            "P": None if self.P is None else self.P.tolist(),
            "A": None if self.model is None else self.model.A.tolist(),
            "B": None if self.model is None else self.model.B.tolist(),
            "input_mask": None if self.model is None else self.model.input_mask.tolist(),
            "hover": self.hover.to_dict(),
        }

    def save(self, path: str | Path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path: str | Path, vp: VehicleParams, pp: PropellerParams) -> CascadedController:
        d = yaml.safe_load(Path(path).read_text())
        c = d["controller"]
        cfg = ControllerConfig(
            Q=tuple(c["Q"]),
            R=tuple(c["R"]),
            damping=c["damping"],
            natural_freq=c["natural_freq"],
            collective=c["collective"],
            max_position_error=c["max_position_error"],
            max_tilt=c["max_tilt"],
            max_accel_z=c["max_accel_z"],
        )
        hover = HoverSolution.from_dict(d["hover"], vp)
        model = None
        if d.get("A") is not None:
            zeta_bar = np.array([hover.body_rates[0], hover.body_rates[1], hover.axis[0], hover.axis[1]])
            model = LinearModel(
                np.array(d["A"]), np.array(d["B"]), zeta_bar, np.array(d["input_mask"], dtype=bool)
            )
        P = None if d.get("P") is None else np.array(d["P"])
        return cls(vp, pp, hover, cfg, np.array(d["K"]), P, model)
