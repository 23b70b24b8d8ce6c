"""Scenario bundles: one YAML file naming every input of an end-to-end run."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .control import CascadedController, ControllerConfig
from .equilibrium import HoverSolution, failure_tilts, solve_hover
from .params import Airframe, ConfigError, load_airframe
from .planner import (
    LandingSpot,
    PlannedPath,
    Tree,
    WorldMap,
    build_gvd,
    load_map,
    path_clearance,
    rrt_star,
    select_landing_spot,
    shortcut_path,
    RrtParams,
)
from .simulator import SimConfig, SimLog, follow_path, near_equilibrium_state, run_closed_loop

DEFAULT_SEED = 20200531

_CONTROLLER_KEYS = {
    "weights",
    "Q",
    "R",
    "damping",
    "natural_freq",
    "collective",
    "max_position_error",
    "max_tilt",
    "max_accel_z",
}
_PLANNER_KEYS = {"a", "b", "step", "rewire_radius", "mode", "max_samples", "goal_bias", "tracking_margin"}
_SIM_KEYS = {
    "dt",
    "duration",
    "control_rate",
    "log_interval",
    "motor_lag",
    "yaw_rate_scale",
    "tilt",
    "acceptance_radius",
    "final_radius",
    "touchdown_speed",
    "waypoint_timeout",
}


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _bundled(name: str) -> str:
    return resources.files("quadfail.data").joinpath(name).read_text()


def _section(data: dict, key: str, allowed: set) -> dict:
    sec = data.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"key '{key}' must be a mapping")
    for k in sec:
        if k not in allowed:
            raise ConfigError(f"unknown key '{key}.{k}'")
    return dict(sec)


@dataclass
class ScenarioBundle:
    airframe: Airframe
    world: WorldMap | None
    seed: int
    failed_motor: int
    failure_time: float
    rho: float
    alpha: float
    alpha_other: float
    start: np.ndarray
    setpoint: np.ndarray | None
    controller: ControllerConfig
    planner: dict
    sim: dict
    digests: dict = field(default_factory=dict)

    def header_lines(self) -> list[str]:
        lines = [f"quadfail {__version__}", f"seed {self.seed}"]
        lines += [f"digest {name} {value}" for name, value in sorted(self.digests.items())]
        return lines


def controller_config(section: dict) -> ControllerConfig:
    sec = dict(section)
    preset = sec.pop("weights", "flight")
    if preset not in ("flight", "published"):
        raise ConfigError(f"controller.weights must be 'flight' or 'published', got {preset!r}")
    for key in ("Q", "R"):
        if key in sec:
            sec[key] = tuple(float(v) for v in sec[key])
    try:
        return ControllerConfig.flight(**sec) if preset == "flight" else ControllerConfig(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad controller section: {exc}") from exc


def load_scenario(path: str | Path | None = None, name: str = "scenario_landing.yaml", base: Path | None = None) -> ScenarioBundle:
    """Parse a scenario file; referenced vehicle/map paths are relative to it."""
    if path is None:
        text = _bundled(name)
        base = base or Path(".")
        digests = {"scenario": digest_text(text)}
    else:
        path = Path(path)
        text = path.read_text()
        base = path.parent
        digests = {"scenario": digest_text(text)}
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse scenario: {exc}") from exc
    return scenario_from_dict(data, base, digests)


def scenario_from_dict(data: dict, base: Path = Path("."), digests: dict | None = None) -> ScenarioBundle:
    digests = dict(digests or {})
    allowed = {"vehicle", "map", "seed", "failure", "hover", "start", "setpoint", "controller", "planner", "sim"}
    for k in data:
        if k not in allowed:
            raise ConfigError(f"unknown key '{k}'")

    if data.get("vehicle"):
        vpath = base / data["vehicle"]
        digests["vehicle"] = digest_text(vpath.read_text())
        airframe = load_airframe(vpath)
    else:
        digests["vehicle"] = digest_text(_bundled("vehicle.yaml"))
        airframe = load_airframe()

    world = None
    if data.get("map"):
        if data["map"] == "bundled":
            digests["map"] = digest_text(_bundled("city_map.yaml"))
            world = load_map()
        else:
            mpath = base / data["map"]
            digests["map"] = digest_text(mpath.read_text())
            world = load_map(mpath)

    failure = _section(data, "failure", {"motor", "time"})
    hover = _section(data, "hover", {"rho", "alpha", "alpha_other"})
    start = np.asarray(data.get("start", [0.0, 0.0, 10.0]), dtype=float)
    setpoint = data.get("setpoint")
    if start.shape != (3,):
        raise ConfigError("start needs three coordinates")
    if setpoint is not None:
        setpoint = np.asarray(setpoint, dtype=float)
        if setpoint.shape != (3,):
            raise ConfigError("setpoint needs three coordinates")
    if setpoint is None and world is None:
        raise ConfigError("a scenario needs either a setpoint or a map")
    seed = int(data.get("seed", DEFAULT_SEED))
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")

    return ScenarioBundle(
        airframe=airframe,
        world=world,
        seed=seed,
        failed_motor=int(failure.get("motor", 4)),
        failure_time=float(failure.get("time", 0.0)),
        rho=float(hover.get("rho", 0.0)),
        alpha=float(hover.get("alpha", 0.4)),
        alpha_other=float(hover.get("alpha_other", 0.0)),
        start=start,
        setpoint=setpoint,
        controller=controller_config(_section(data, "controller", _CONTROLLER_KEYS)),
        planner=_section(data, "planner", _PLANNER_KEYS),
        sim=_section(data, "sim", _SIM_KEYS),
        digests=digests,
    )


@dataclass
class PlanResult:
    spot: LandingSpot
    raw: PlannedPath
    path: PlannedPath
    tree: Tree
    planning_world: WorldMap
    gvd: object


@dataclass
class ScenarioResult:
    hover: HoverSolution
    controller: CascadedController
    log: SimLog
    plan: PlanResult | None = None

    @property
    def min_clearance(self) -> float:
        if self.plan is None:
            return math.inf
        world = replace(self.plan.planning_world, inflation=0.0)
        return path_clearance(self.log.position, world)


def design(bundle: ScenarioBundle) -> tuple[HoverSolution, CascadedController]:
    vp = replace(
        bundle.airframe.vehicle,
        tilt_angles=failure_tilts(bundle.failed_motor, bundle.alpha, bundle.alpha_other),
    )
    pp = bundle.airframe.propeller
    hover = solve_hover(vp, pp, bundle.rho, bundle.failed_motor)
    return hover, CascadedController.design(vp, pp, hover, bundle.controller)


def plan(bundle: ScenarioBundle, world: WorldMap | None = None) -> PlanResult:
    """Landing spot on the ground-plane diagram, then RRT* and the shortcut pass.

    The tree is grown against obstacles inflated by the safety margin plus
    ``tracking_margin``, which absorbs the corner cutting of the flown path.
    """
    world = world or bundle.world
    if world is None:
        raise ConfigError("planning needs a map")
    p = bundle.planner
    gvd = build_gvd(world)
    spot = select_landing_spot(gvd, bundle.start[:2], float(p.get("a", 50000.0)), float(p.get("b", 1.0)))
    params = RrtParams(
        step=float(p.get("step", 50.0)),
        rewire_radius=float(p.get("rewire_radius", 150.0)),
        mode=str(p.get("mode", "until-found")),
        max_samples=int(p.get("max_samples", 2000)),
        seed=bundle.seed,
        goal_bias=float(p.get("goal_bias", 0.05)),
    )
    planning_world = replace(world, inflation=world.inflation + float(p.get("tracking_margin", 10.0)))
    raw, tree = rrt_star(planning_world, bundle.start, spot.position, params)
    return PlanResult(spot, raw, shortcut_path(raw, planning_world), tree, world, gvd)


def sim_config(bundle: ScenarioBundle, hover: HoverSolution, **overrides) -> SimConfig:
    s = {**bundle.sim, **overrides}
    x0 = near_equilibrium_state(
        hover,
        bundle.start,
        yaw_rate_scale=float(s.pop("yaw_rate_scale", 1.0)),
        tilt=float(s.pop("tilt", 0.0)),
    )
    af = bundle.airframe
    try:
        return SimConfig(
            vehicle=hover.vehicle or af.vehicle,
            propeller=af.propeller,
            initial_state=x0,
            failed_motor=bundle.failed_motor,
            failure_time=bundle.failure_time,
            setpoint=bundle.setpoint,
            **s,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sim section: {exc}") from exc


def run_scenario(bundle: ScenarioBundle, **sim_overrides) -> ScenarioResult:
    """Failure -> hover solve -> controller -> (plan) -> closed-loop flight."""
    hover, controller = design(bundle)
    cfg = sim_config(bundle, hover, **sim_overrides)
    if bundle.setpoint is not None:
        return ScenarioResult(hover, controller, run_closed_loop(cfg, controller))
    result = plan(bundle)
    log = follow_path(cfg, controller, result.path)
    return ScenarioResult(hover, controller, log, result)
