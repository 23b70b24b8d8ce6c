"""Position step from (0, 0, 10) to (-5, 2, 16) after the rotor failure.

Usage: python3 scripts/setpoint_flight.py [--weights flight|published] [--dt 1e-4]
       [--yaw-scale 1.1] [--tilt-deg 5] [--csv log.csv]
"""

import argparse
import math

import numpy as np

from quadfail.scenario import controller_config, load_scenario, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights", choices=("flight", "published"), default="flight")
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--yaw-scale", type=float, default=1.0, help="initial yaw rate over the hover value")
    ap.add_argument("--tilt-deg", type=float, default=0.0, help="initial tilt of the spin axis")
    ap.add_argument("--csv")
    args = ap.parse_args()

    bundle = load_scenario(name="scenario_setpoint.yaml")
    bundle.controller = controller_config({"weights": args.weights})
    result = run_scenario(
        bundle, dt=args.dt, duration=args.duration, yaw_rate_scale=args.yaw_scale, tilt=math.radians(args.tilt_deg)
    )
    log = result.log
    target = bundle.setpoint
    for t in (0, 5, 10, 15, 20, 25, 30):
        k = min(np.searchsorted(log.t, t), len(log) - 1)
        print(f"t={log.t[k]:5.1f} s  d={np.round(log.position[k], 3).tolist()}  r={log.body_rates[k, 2]:.2f} rad/s")
    err = np.abs(log.position[-1] - target)
    print(f"final error per axis {np.round(err, 4).tolist()} m (5% limits {np.round(0.05 * np.abs(target - bundle.start), 2).tolist()})")
    print(f"diverged={log.diverged} energy={log.energy:.1f} J")
    if args.csv:
        with open(args.csv, "w") as fh:
            log.write_csv(fh, bundle.header_lines())


if __name__ == "__main__":
    main()
