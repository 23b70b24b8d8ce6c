"""Inner-loop speed against the outer position loop for the two weight presets.

Prints the closed-loop poles of the reduced-attitude LQR and the cascade
separation (slowest inner decay rate over the outer natural frequency),
then flies the setpoint step with each preset.

Usage: python3 scripts/cascade_study.py [--dt 1e-3]
"""

import argparse

import numpy as np

from quadfail.control import CascadedController, ControllerConfig, cascade_separation, inner_decay_rate
from quadfail.equilibrium import solve_hover
from quadfail.params import load_airframe
from quadfail.simulator import SimConfig, near_equilibrium_state, run_closed_loop


def fly(vp, pp, ctrl, dt, natural_freq=None):
    if natural_freq is not None:
        cfg = ControllerConfig(**{**ctrl.config.__dict__, "natural_freq": natural_freq})
        ctrl = CascadedController.design(vp, pp, ctrl.hover, cfg)
    sim = SimConfig(vp, pp, near_equilibrium_state(ctrl.hover, [0, 0, 10]), duration=60.0, dt=dt,
                    setpoint=np.array([-5.0, 2.0, 16.0]))
    log = run_closed_loop(sim, ctrl)
    tail = log.position[log.t >= 50.0]
    return log, np.abs(tail - [-5, 2, 16]).max(axis=0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dt", type=float, default=1e-3)
    args = ap.parse_args()

    af = load_airframe()
    vp, pp = af.vehicle, af.propeller
    hover = solve_hover(vp, pp, 0.0, 4)
    presets = {"published": ControllerConfig(), "flight": ControllerConfig.flight()}
    for name, cfg in presets.items():
        ctrl = CascadedController.design(vp, pp, hover, cfg)
        eig = np.linalg.eigvals(ctrl.model.A - ctrl.model.B @ ctrl.K)
        print(f"{name}: Q={cfg.Q} R={cfg.R}")
        print("  poles: " + ", ".join(f"{e:.3f}" for e in sorted(eig, key=lambda e: e.real)))
        print(f"  slowest decay {inner_decay_rate(ctrl.model, ctrl.K):.3f} 1/s, "
              f"separation {cascade_separation(ctrl):.2f} (outer w_n={cfg.natural_freq})")
        log, err = fly(vp, pp, ctrl, args.dt)
        print(f"  setpoint step: diverged={log.diverged}, max |error| over last 10 s {np.round(err, 3).tolist()} m")
        if name == "published":
            for wn in (0.3, 0.2):
                _, err = fly(vp, pp, ctrl, args.dt, natural_freq=wn)
                print(f"  with w_n={wn}: max |error| over last 10 s {np.round(err, 3).tolist()} m")


if __name__ == "__main__":
    main()
