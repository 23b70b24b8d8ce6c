"""Command-line entry point: hover-solve, power-sweep, plan, simulate."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .equilibrium import (
    HoverSolveError,
    TuningConfig,
    argmin_row,
    failure_tilts,
    power_sweep,
    solve_hover,
)
from .params import ConfigError, load_airframe
from .planner import PathNotFound, PlannerError
from .scenario import (
    DEFAULT_SEED,
    digest_text,
    load_scenario,
    plan as plan_scenario,
    run_scenario,
    scenario_from_dict,
)

EXIT_OK = 0
EXIT_CRASH = 1
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_PATH_NOT_FOUND = 4
EXIT_FLIGHT_FAILED = 5


def _header(seed: int, inputs: dict[str, str]) -> list[str]:
    lines = [f"quadfail {__version__}", f"seed {seed}"]
    lines += [f"digest {k} {v}" for k, v in sorted(inputs.items())]
    return lines


def _vehicle_digest(path) -> str:
    if path is None:
        from importlib import resources

        return digest_text(resources.files("quadfail.data").joinpath("vehicle.yaml").read_text())
    return digest_text(Path(path).read_text())


def _grid(lo: float, hi: float, step: float) -> tuple[float, ...]:
    if step <= 0:
        raise ConfigError("grid step must be positive")
    n = int(np.floor((hi - lo) / step + 1e-9))
    return tuple(float(v) for v in np.round(lo + step * np.arange(n + 1), 10))


# ---------------------------------------------------------------- commands


def cmd_hover_solve(args) -> int:
    af = load_airframe(args.config)
    vp = replace(af.vehicle, tilt_angles=failure_tilts(args.failed_motor, args.alpha, args.alpha_other))
    try:
        sol = solve_hover(vp, af.propeller, args.rho, args.failed_motor)
    except HoverSolveError as exc:
        print(f"hover solve failed: best residual {exc.best_residual:.3e}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    w = sol.body_rates
    print(f"rho={sol.rho:g} alpha_pair={args.alpha:g} failed_motor={args.failed_motor}")
    print(f"body rates [rad/s]: p={w[0]:.6g} q={w[1]:.6g} r={w[2]:.6g}")
    print("axis n: " + " ".join(f"{v:.6f}" for v in sol.axis))
    print("prop speeds [rad/s]: " + " ".join(f"{v:.4f}" for v in sol.prop_speeds))
    print("thrusts [N]: " + " ".join(f"{v:.5f}" for v in sol.prop_thrusts))
    print("motor power [W]: " + " ".join(f"{v:.4f}" for v in sol.motor_power))
    print(f"total power [W]: {sol.total_power:.4f}")
    print(f"residual: {sol.residual:.3e}")
    if args.out:
        doc = {"header": _header(args.seed, {"vehicle": _vehicle_digest(args.config)}), "hover": sol.to_dict()}
        Path(args.out).write_text(yaml.safe_dump(doc, sort_keys=False))
    return EXIT_OK


SWEEP_COLUMNS = ["rho", "alpha", "converged", "total_power_W", "yaw_rate", "omega_1", "omega_2", "omega_3", "omega_4", "argmin"]


def sweep_csv(rows, header_lines) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    best = None
    try:
        best = argmin_row(rows)
    except HoverSolveError:
        pass
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        if row.converged:
            s = row.solution
            vals = [f"{s.total_power:.6f}", f"{s.body_rates[2]:.6f}", *(f"{v:.6f}" for v in s.prop_speeds)]
        else:
            vals = ["nan"] * 6
        w.writerow([f"{row.rho:g}", f"{row.alpha:g}", int(row.converged), *vals, int(row is best)])
    if best is not None:
        buf.write(f"# argmin rho={best.rho:g} alpha={best.alpha:g} total_power_W={best.total_power:.6f}\n")
    return buf.getvalue()


def cmd_power_sweep(args) -> int:
    af = load_airframe(args.config)
    tuning = TuningConfig(
        rho_grid=_grid(args.rho_min, args.rho_max, args.rho_step),
        alpha_grid=_grid(args.alpha_min, args.alpha_max, args.alpha_step),
        alpha_other=args.alpha_other,
    )
    rows = power_sweep(af.vehicle, af.propeller, tuning, args.failed_motor)
    text = sweep_csv(rows, _header(args.seed, {"vehicle": _vehicle_digest(args.config)}))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if not any(r.converged for r in rows):
        print("no grid point converged", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    best = argmin_row(rows)
    print(f"argmin: rho={best.rho:g} alpha={best.alpha:g} power={best.total_power:.4f} W", file=sys.stderr)
    return EXIT_OK


def _bundle_from_args(args, default_name: str):
    bundle = load_scenario(args.scenario, name=default_name)
    if getattr(args, "map", None):
        from .planner import load_map

        bundle.world = load_map(args.map)
        bundle.digests["map"] = digest_text(Path(args.map).read_text())
    if args.seed is not None:
        bundle.seed = args.seed
    if getattr(args, "start", None):
        bundle.start = np.asarray(args.start, dtype=float)
    return bundle


def cmd_plan(args) -> int:
    bundle = _bundle_from_args(args, "scenario_landing.yaml")
    for key in ("a", "b", "step", "rewire_radius", "mode", "tracking_margin"):
        val = getattr(args, key)
        if val is not None:
            bundle.planner[key] = val
    if args.samples is not None:
        bundle.planner["max_samples"] = args.samples
    try:
        result = plan_scenario(bundle)
    except PathNotFound as exc:
        print(f"path not found ({bundle.planner.get('mode', 'until-found')} mode): {exc}", file=sys.stderr)
        return EXIT_PATH_NOT_FOUND
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = bundle.header_lines()
    with open(out / "path_raw.csv", "w") as fh:
        result.raw.write_csv(fh, header)
    with open(out / "path.csv", "w") as fh:
        result.path.write_csv(fh, header)
    with open(out / "tree.csv", "w") as fh:
        result.tree.write_csv(fh, header)
    with open(out / "gvd.csv", "w") as fh:
        result.gvd.write_csv(fh, header)
    s = result.spot
    print(f"landing spot: ({s.position[0]:g}, {s.position[1]:g}, 0) clearance={s.clearance:.3f} m distance={s.distance:.3f} m cost={s.cost:.4f}")
    print(f"path length: raw {result.raw.total_length:.3f} m, shortcut {result.path.total_length:.3f} m ({len(result.path.waypoints)} waypoints)")
    print(f"tree: {len(result.tree)} vertices, {result.tree.iterations} iterations, seed {bundle.seed}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    bundle = _bundle_from_args(args, "scenario_setpoint.yaml" if args.setpoint else "scenario_landing.yaml")
    if args.setpoint:
        bundle.setpoint = np.asarray(args.setpoint, dtype=float)
    if args.weights:
        from .scenario import controller_config

        bundle.controller = controller_config({"weights": args.weights})
    overrides = {}
    for key in ("duration", "dt"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    if args.motor_lag:
        overrides["motor_lag"] = True
    try:
        result = run_scenario(bundle, **overrides)
    except HoverSolveError as exc:
        print(f"hover solve failed: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except PathNotFound as exc:
        print(f"path not found: {exc}", file=sys.stderr)
        return EXIT_PATH_NOT_FOUND
    log = result.log
    if args.out:
        with open(args.out, "w") as fh:
            log.write_csv(fh, bundle.header_lines())
    end = log.position[-1]
    status = "ok"
    if log.diverged:
        status = f"DIVERGED ({log.message})"
    elif log.timed_out:
        status = f"TIMEOUT ({log.message})"
    elif bundle.setpoint is None and not log.touchdown:
        status = f"NO TOUCHDOWN ({log.message or 'duration elapsed'})"
    label = "final position" if bundle.setpoint is not None else "touchdown position"
    print(
        f"{label}: ({end[0]:.3f}, {end[1]:.3f}, {end[2]:.3f}) m  flight time: {log.t[-1]:.2f} s  "
        f"energy: {log.energy:.1f} J  status: {status}"
    )
    if result.plan is not None:
        spot = result.plan.spot.position
        print(
            f"distance to spot: {np.linalg.norm(end[:2] - np.asarray(spot[:2])):.3f} m  "
            f"min obstacle clearance: {result.min_clearance:.3f} m"
        )
    return EXIT_OK if status == "ok" else EXIT_FLIGHT_FAILED


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quadfail", description=__doc__)
    ap.add_argument("--version", action="version", version=f"quadfail {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common_vehicle(p):
        p.add_argument("--config", help="vehicle YAML (default: bundled vehicle)")
        p.add_argument("--failed-motor", type=int, default=4, choices=(1, 2, 3, 4))
        p.add_argument("--alpha-other", type=float, default=0.0, help="tilt of the opposite pair (rad)")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    p = sub.add_parser("hover-solve", help="solve the post-failure spin hover")
    common_vehicle(p)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.4, help="tilt of the pair next to the failed motor (rad)")
    p.add_argument("--out", help="write the solution as YAML")
    p.set_defaults(func=cmd_hover_solve)

    p = sub.add_parser("power-sweep", help="hover power over a (rho, alpha) grid")
    common_vehicle(p)
    p.add_argument("--rho-min", type=float, default=0.0)
    p.add_argument("--rho-max", type=float, default=1.0)
    p.add_argument("--rho-step", type=float, default=0.1)
    p.add_argument("--alpha-min", type=float, default=0.0)
    p.add_argument("--alpha-max", type=float, default=0.4)
    p.add_argument("--alpha-step", type=float, default=0.05)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_power_sweep)

    def common_scenario(p):
        p.add_argument("--scenario", help="scenario YAML (default: bundled)")
        p.add_argument("--map", help="map YAML overriding the scenario's map")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--start", type=float, nargs=3, metavar=("X", "Y", "Z"))

    p = sub.add_parser("plan", help="landing spot, RRT* path and shortcut")
    common_scenario(p)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--rewire-radius", type=float)
    p.add_argument("--mode", choices=("until-found", "fixed"))
    p.add_argument("--samples", type=int, help="vertex count in fixed mode")
    p.add_argument("--tracking-margin", type=float)
    p.add_argument("--out-dir", default="plan_out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="closed-loop flight (setpoint or full landing)")
    common_scenario(p)
    p.add_argument("--setpoint", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--duration", type=float)
    p.add_argument("--dt", type=float, help="integrator step (s)")
    p.add_argument("--weights", choices=("flight", "published"))
    p.add_argument("--motor-lag", action="store_true", help="first-order motor lag instead of ideal motors")
    p.add_argument("--out", help="SimLog CSV path")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlannerError as exc:
        print(f"planner error: {exc}", file=sys.stderr)
        return EXIT_PATH_NOT_FOUND


if __name__ == "__main__":
    sys.exit(main())
