"""Propeller aerodynamics and rigid-body equations of motion.

Body frame: x forward through motor 1, z up along the untilted thrust axis.
Inertial frame: z up, gravity along -z. Attitude quaternions are
scalar-first and rotate body vectors into the inertial frame.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .params import PropellerParams, VehicleParams

E_Z = np.array([0.0, 0.0, 1.0])
# motor i (0-based) sits at angle i*90 deg in the body xy-plane
RADIAL = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
TANGENTIAL = np.cross(E_Z, RADIAL)


class ModelValidityWarning(UserWarning):
    """The blade-element thrust went negative and was clamped to zero."""


def propeller_thrust(pp: PropellerParams, omega_p, r_bar, arm: float):
    """Blade-element thrust of one propeller in the spin-induced freestream.

    Not clamped: extreme (omega_p, r_bar) pairs can return negative values.
    """
    rb = pp.blade_radius
    rb3 = rb**3
    return pp.k_lift * (
        rb3 * omega_p**2 / 3
        + rb3 * r_bar**2 / 3
        + rb * r_bar**2 * arm**2 / 2
        + 2 * rb3 * r_bar * omega_p / 3
    )


def propeller_moment(pp: PropellerParams, omega_p, r_bar, arm: float):
    """Signed asymmetric-lift moment of one propeller (advancing vs retreating blade)."""
    rb3 = pp.blade_radius**3
    return pp.k_lift * (rb3 * r_bar * arm * omega_p + rb3 * r_bar**2 * arm) / 3


def clamped_thrust(pp: PropellerParams, omega_p, r_bar, arm: float):
    f = np.asarray(propeller_thrust(pp, omega_p, r_bar, arm), dtype=float)
    if np.any(f < 0):
        warnings.warn(
            "blade-element thrust negative outside model validity; clamped to 0",
            ModelValidityWarning,
            stacklevel=2,
        )
        f = np.maximum(f, 0.0)
    return f


def reaction_torque(k_tau: float, f_p, omega_p: float) -> np.ndarray:
    return -np.sign(omega_p) * k_tau * np.asarray(f_p, dtype=float)


def thrust_direction(alpha: float, motor_index: int) -> np.ndarray:
    """Unit thrust axis (body frame) of motor ``motor_index`` (1..4) tilted by ``alpha``."""
    if motor_index not in (1, 2, 3, 4):
        raise ValueError(f"motor_index must be 1..4, got {motor_index}")
    i = motor_index - 1
    return math.cos(alpha) * E_Z - math.sin(alpha) * TANGENTIAL[i]


def motor_frame_thrust(f_mag: float, alpha: float, motor_index: int) -> np.ndarray:
    """Thrust vector in the body frame.

    In the motor frame (x radial, y tangential, z up) the force (0, 0, f) is
    rotated about x by ``alpha``.
    """
    return f_mag * thrust_direction(alpha, motor_index)


@dataclass
class Geometry:
    """Per-motor geometry derived from VehicleParams, cached for the hot path."""

    positions: np.ndarray  # (4, 3) body frame
    thrust_dirs: np.ndarray  # (4, 3) unit
    spin: np.ndarray  # (4,)

    @classmethod
    def of(cls, vp: VehicleParams) -> Geometry:
        dirs = np.array([thrust_direction(a, i + 1) for i, a in enumerate(vp.tilt_angles)])
        return cls(vp.arm_length * RADIAL, dirs, np.array(vp.spin_dirs, dtype=float))


_GEOMETRY_CACHE: dict[VehicleParams, Geometry] = {}


def geometry(vp: VehicleParams) -> Geometry:
    g = _GEOMETRY_CACHE.get(vp)
    if g is None:
        g = _GEOMETRY_CACHE[vp] = Geometry.of(vp)
    return g


def quat_to_rot(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * axis])


def quat_mul(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_derivative(q, omega_body) -> np.ndarray:
    return 0.5 * quat_mul(q, np.concatenate([[0.0], omega_body]))


@dataclass
class RigidBodyState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    body_rates: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.quaternion = np.asarray(self.quaternion, dtype=float)
        self.body_rates = np.asarray(self.body_rates, dtype=float)

    @property
    def rotation(self) -> np.ndarray:
        """Body-to-inertial rotation matrix."""
        return quat_to_rot(self.quaternion)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.quaternion, self.body_rates])

    @classmethod
    def from_vector(cls, x) -> RigidBodyState:
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:10].copy(), x[10:13].copy())


@dataclass
class MotorCommand:
    prop_speeds: np.ndarray  # rad/s, signed
    failed_mask: tuple[bool, bool, bool, bool] = (False, False, False, False)

    def __post_init__(self):
        self.prop_speeds = np.asarray(self.prop_speeds, dtype=float)
        if any(self.failed_mask):
            self.prop_speeds = np.where(self.failed_mask, 0.0, self.prop_speeds)

    def validate(self, vp: VehicleParams):
        s = np.sign(self.prop_speeds)
        if np.any((s != 0) & (s != np.array(vp.spin_dirs))):
            raise ValueError("prop speed sign disagrees with the motor spin direction")


def running_mask(speeds, active=None) -> np.ndarray:
    if active is None:
        return np.asarray(speeds) != 0.0
    return np.asarray(active, dtype=bool)


def motor_forces(vp: VehicleParams, pp: PropellerParams, speeds, yaw_rate: float, active=None):
    """Thrust magnitudes (N) and body-frame thrust vectors (4, 3).

    A motor that is not running produces no thrust, whatever the freestream.
    ``active`` defaults to "speed is nonzero".
    """
    speeds = np.asarray(speeds, dtype=float)
    mags = clamped_thrust(pp, speeds, yaw_rate, vp.arm_length)
    mags = np.where(running_mask(speeds, active), mags, 0.0)
    return mags, mags[:, None] * geometry(vp).thrust_dirs


def body_torques(
    vp: VehicleParams, pp: PropellerParams, omega_body, speeds, active=None
) -> np.ndarray:
    """Sum of external torques: thrust lever arms, drag, reaction, asymmetric lift."""
    geo = geometry(vp)
    speeds = np.asarray(speeds, dtype=float)
    on = running_mask(speeds, active)
    r = omega_body[2]
    mags, forces = motor_forces(vp, pp, speeds, r, on)

    tau_lift = np.cross(geo.positions, forces).sum(axis=0)
    tau_drag = -np.array([vp.rot_drag_xy[0], vp.rot_drag_xy[1], vp.yaw_drag]) * omega_body
    reaction_axis = forces if vp.reaction_along_thrust else mags[:, None] * E_Z
    tau_reaction = (-np.sign(speeds)[:, None] * vp.reaction_coeff * reaction_axis).sum(axis=0)
    moments = np.where(on, propeller_moment(pp, speeds, r, vp.arm_length), 0.0)
    tau_prop = vp.prop_moment_sign * (moments[:, None] * TANGENTIAL).sum(axis=0)
    return tau_lift + tau_drag + tau_reaction + tau_prop


def gyroscopic_torque(vp: VehicleParams, omega_body, speeds) -> np.ndarray:
    """sk(w) (I w + sum_i Ip (w_pi + w))."""
    ib = np.asarray(vp.inertia)
    ip = np.asarray(vp.prop_inertia)
    h = ib * omega_body + ip * (4 * omega_body + np.array([0.0, 0.0, float(np.sum(speeds))]))
    return np.cross(omega_body, h)


def rotational_dynamics(
    vp: VehicleParams,
    pp: PropellerParams,
    state: RigidBodyState,
    cmd: MotorCommand,
    speed_rates=None,
) -> np.ndarray:
    """Body angular acceleration from the rotational equation of motion.

    ``speed_rates`` are prop angular accelerations; when omitted the
    propeller spin-up term is dropped.
    """
    w = state.body_rates
    rhs = body_torques(vp, pp, w, cmd.prop_speeds) - gyroscopic_torque(vp, w, cmd.prop_speeds)
    if speed_rates is not None:
        rhs = rhs - np.array([0.0, 0.0, vp.prop_inertia[2] * float(np.sum(speed_rates))])
    return rhs / np.asarray(vp.inertia)


def translational_dynamics(vp: VehicleParams, state: RigidBodyState, force_body) -> np.ndarray:
    drag = -np.asarray(vp.linear_drag) * state.velocity
    return (state.rotation @ np.asarray(force_body, dtype=float) + drag) / vp.mass + np.array(
        [0.0, 0.0, -vp.gravity]
    )


def n_vector_dynamics(omega_body, n) -> np.ndarray:
    return -np.cross(omega_body, n)
