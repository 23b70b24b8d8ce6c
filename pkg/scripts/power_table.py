"""Hover power over the (rho, alpha) grid, printed as a table.

Usage: python3 scripts/power_table.py [--alpha-max 0.5] [--csv out.csv]
"""

import argparse

import numpy as np

from quadfail.equilibrium import TuningConfig, argmin_row, power_sweep
from quadfail.params import load_airframe


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rho-step", type=float, default=0.1)
    ap.add_argument("--alpha-step", type=float, default=0.05)
    ap.add_argument("--alpha-max", type=float, default=0.5)
    ap.add_argument("--alpha-other", type=float, default=0.0)
    ap.add_argument("--csv")
    args = ap.parse_args()

    af = load_airframe()
    rhos = tuple(np.round(np.arange(0.0, 1.0 + 1e-9, args.rho_step), 10))
    alphas = tuple(np.round(np.arange(0.0, args.alpha_max + 1e-9, args.alpha_step), 10))
    rows = power_sweep(af.vehicle, af.propeller, TuningConfig(rhos, alphas, args.alpha_other), 4)

    table = {(r.rho, r.alpha): r for r in rows}
    print("rho \\ alpha " + "".join(f"{a:>8.2f}" for a in alphas))
    for rho in rhos:
        cells = []
        for a in alphas:
            r = table[(rho, a)]
            cells.append(f"{r.total_power:8.2f}" if r.converged else "       -")
        print(f"{rho:>11.2f} " + "".join(cells))

    best = argmin_row(rows)
    untilted = min((r for r in rows if r.alpha == 0.0 and r.converged), key=lambda r: r.total_power)
    print(f"\nargmin: rho={best.rho:g} alpha={best.alpha:g} P={best.total_power:.3f} W")
    print(f"alpha=0 best: rho={untilted.rho:g} P={untilted.total_power:.3f} W")
    print(f"rho=0 alpha=0.4: P={table[(0.0, 0.4)].total_power:.3f} W" if (0.0, 0.4) in table else "")
    for r in rows:
        s = r.solution
        if s is not None and abs(s.axis[2]) < 0.99:
            print(f"note: tilted-axis branch at rho={r.rho:g} alpha={r.alpha:g}, n={np.round(s.axis, 3).tolist()}, "
                  f"r={s.yaw_rate:.2f} rad/s, P={s.total_power:.1f} W")

    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("rho,alpha,converged,total_power_W,yaw_rate\n")
            for r in rows:
                s = r.solution
                fh.write(f"{r.rho:g},{r.alpha:g},{int(r.converged)},{r.total_power:.6f},"
                         f"{s.yaw_rate if s else float('nan'):.6f}\n")


if __name__ == "__main__":
    main()
