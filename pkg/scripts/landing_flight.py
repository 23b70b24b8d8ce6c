"""End-to-end emergency landing on the bundled city map.

Failure at t = 0 at (500, 500, 550), landing-spot search, RRT* path,
shortcut, then the closed-loop flight to touchdown.

Usage: python3 scripts/landing_flight.py [--dt 1e-4] [--seed N] [--out-dir landing_out]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from quadfail.scenario import load_scenario, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out-dir")
    args = ap.parse_args()

    bundle = load_scenario()
    if args.seed is not None:
        bundle.seed = args.seed
    t0 = time.perf_counter()
    result = run_scenario(bundle, dt=args.dt)
    runtime = time.perf_counter() - t0
    plan, log = result.plan, result.log
    spot = np.asarray(plan.spot.position)
    print(f"landing spot {plan.spot.position}, clearance {plan.spot.clearance:.1f} m, cost {plan.spot.cost:.3f}")
    print(f"path: {len(plan.raw.waypoints)} raw -> {len(plan.path.waypoints)} waypoints, "
          f"{plan.raw.total_length:.1f} -> {plan.path.total_length:.1f} m, tree {len(plan.tree)} vertices")
    print(f"touchdown={log.touchdown} at {np.round(log.position[-1], 3).tolist()}, "
          f"{np.linalg.norm(log.position[-1, :2] - spot[:2]):.3f} m from the spot, |vz|={abs(log.velocity[-1, 2]):.3f} m/s")
    print(f"flight {log.t[-1]:.1f} s, energy {log.energy:.1f} J, min clearance {result.min_clearance:.2f} m, "
          f"runtime {runtime:.1f} s {log.message}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = bundle.header_lines()
        with open(out / "log.csv", "w") as fh:
            log.write_csv(fh, header)
        with open(out / "path.csv", "w") as fh:
            plan.path.write_csv(fh, header)
        with open(out / "tree.csv", "w") as fh:
            plan.tree.write_csv(fh, header)
        with open(out / "gvd.csv", "w") as fh:
            plan.gvd.write_csv(fh, header)


if __name__ == "__main__":
    main()
