"""Vehicle and propeller parameters, plus YAML config loading."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

SPIN_DIRS = (-1, 1, -1, 1)


class ConfigError(ValueError):
    """Raised when a configuration file is malformed."""


@dataclass(frozen=True)
class PropellerParams:
    air_density: float = 1.225  # kg/m^3
    blade_chord: float = 0.03  # m
    lift_coeff: float = 1.022
    blade_radius: float = 0.08  # m

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"propeller.{f.name} must be strictly positive")

    @property
    def k_lift(self) -> float:
        """Lumped rho_a * c * C_L."""
        return self.air_density * self.blade_chord * self.lift_coeff


@dataclass(frozen=True)
class VehicleParams:
    """Rigid-body and actuator constants of the quadcopter.

    Motors sit in a ``+`` layout: motor 1 on +x, 2 on +y, 3 on -x, 4 on -y.
    ``tilt_angles`` rotate each thrust axis about its radial (motor-frame x)
    axis; a positive tilt on motor 1 or 3 produces a negative yaw moment.
    """

    mass: float = 0.5
    inertia: tuple[float, float, float] = (3.2e-3, 3.2e-3, 5.5e-3)
    prop_inertia: tuple[float, float, float] = (7.5e-6, 7.5e-6, 1.5e-5)
    arm_length: float = 0.17
    yaw_drag: float = 2.75e-3  # beta, N m s
    reaction_coeff: float = 1.69e-2  # k_tau, m
    tilt_angles: tuple[float, float, float, float] = (0.4, 0.0, 0.4, 0.0)
    spin_dirs: tuple[int, int, int, int] = SPIN_DIRS
    linear_drag: tuple[float, float, float] = (0.01, 0.01, 0.01)  # K_D, N s/m
    # roll/pitch rotational drag; yaw uses yaw_drag
    rot_drag_xy: tuple[float, float] = (0.0, 0.0)
    gravity: float = 9.81
    max_prop_speed: float = 900.0
    motor_time_constant: float = 0.05
    # +1 or -1; orientation of the asymmetric-lift moment along the freestream
    prop_moment_sign: int = 1
    # reaction torque about body z (the modelled spin axis) unless set
    reaction_along_thrust: bool = False

    def __post_init__(self):
        if self.mass <= 0 or self.arm_length <= 0:
            raise ConfigError("vehicle.mass and vehicle.arm_length must be positive")
        if min(self.inertia) <= 0 or min(self.prop_inertia) <= 0:
            raise ConfigError("inertia diagonals must be positive")
        if tuple(self.spin_dirs) != SPIN_DIRS:
            raise ConfigError("spin_dirs must be (-1, 1, -1, 1)")
        if len(self.tilt_angles) != 4:
            raise ConfigError("vehicle.tilt_angles needs four entries")
        if any(abs(a) >= math.pi / 6 for a in self.tilt_angles):
            raise ConfigError("tilt angles must satisfy |alpha| < pi/6")
        if self.prop_moment_sign not in (-1, 1):
            raise ConfigError("vehicle.prop_moment_sign must be +1 or -1")

    @property
    def inertia_matrix(self) -> np.ndarray:
        return np.diag(self.inertia)

    @property
    def prop_inertia_matrix(self) -> np.ndarray:
        return np.diag(self.prop_inertia)

    @property
    def weight(self) -> float:
        return self.mass * self.gravity

    def with_tilt(self, alpha_13: float, alpha_24: float = 0.0) -> VehicleParams:
        return replace(self, tilt_angles=(alpha_13, alpha_24, alpha_13, alpha_24))


@dataclass(frozen=True)
class Airframe:
    """Bundle of the two parameter sets, as loaded from one config file."""

    vehicle: VehicleParams = field(default_factory=VehicleParams)
    propeller: PropellerParams = field(default_factory=PropellerParams)


_TUPLE_FIELDS = {
    "inertia",
    "prop_inertia",
    "tilt_angles",
    "spin_dirs",
    "linear_drag",
    "rot_drag_xy",
}


def _build(cls, section: dict, prefix: str):
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in section.items():
        if key not in known:
            raise ConfigError(f"unknown key '{prefix}.{key}'")
        if key in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"key '{prefix}.{key}' must be a list")
            value = tuple(value)
        elif key in ("reaction_along_thrust",):
            if not isinstance(value, bool):
                raise ConfigError(f"key '{prefix}.{key}' must be a boolean")
        elif isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{prefix}.{key}' must be a number")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad section '{prefix}': {exc}") from exc


def airframe_from_dict(data: dict) -> Airframe:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    extra = set(data) - {"vehicle", "propeller"}
    if extra:
        raise ConfigError(f"unknown key '{sorted(extra)[0]}'")
    vehicle = _build(VehicleParams, data.get("vehicle") or {}, "vehicle")
    propeller = _build(PropellerParams, data.get("propeller") or {}, "propeller")
    return Airframe(vehicle, propeller)


def airframe_to_dict(af: Airframe) -> dict:
    def plain(obj):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(obj).items()}

    return {"vehicle": plain(af.vehicle), "propeller": plain(af.propeller)}


def load_airframe(path: str | Path | None = None) -> Airframe:
    """Load a vehicle config; ``None`` returns the bundled default vehicle."""
    if path is None:
        text = resources.files("quadfail.data").joinpath("vehicle.yaml").read_text()
    else:
        text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return airframe_from_dict(data)
