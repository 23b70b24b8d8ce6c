"""Compare 1 kHz and 10 kHz physics (both with the 500 Hz controller).

Runs the setpoint step and the city-map landing at both integrator steps
and prints the differences that matter for acceptance. The 10 kHz
landing takes about two minutes.

Usage: python3 scripts/rate_equivalence.py [--skip-landing]
"""

import argparse
import time

import numpy as np

from quadfail.scenario import load_scenario, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--skip-landing", action="store_true")
    args = ap.parse_args()

    cases = [("setpoint", load_scenario(name="scenario_setpoint.yaml"))]
    if not args.skip_landing:
        cases.append(("landing", load_scenario()))
    for name, bundle in cases:
        out = {}
        for dt in (1e-3, 1e-4):
            t0 = time.perf_counter()
            res = run_scenario(bundle, dt=dt)
            out[dt] = (res, time.perf_counter() - t0)
        (a, ta), (b, tb) = out[1e-3], out[1e-4]
        n = min(len(a.log), len(b.log))
        dev = np.max(np.linalg.norm(a.log.position[:n] - b.log.position[:n], axis=1))
        print(f"{name}: end 1 kHz {np.round(a.log.position[-1], 3).tolist()} ({ta:.1f} s), "
              f"10 kHz {np.round(b.log.position[-1], 3).tolist()} ({tb:.1f} s)")
        print(f"  max trajectory deviation {dev:.2e} m, energy {a.log.energy:.2f} vs {b.log.energy:.2f} J, "
              f"duration {a.log.t[-1]:.2f} vs {b.log.t[-1]:.2f} s")
        if a.plan is not None:
            print(f"  min clearance {a.min_clearance:.2f} vs {b.min_clearance:.2f} m")


if __name__ == "__main__":
    main()
