"""Regenerate the bundled city map used for the emergency-landing scenario.

The layout approximates the published example: a 1 km square block grid
around the failure point (500, 500) with open strips along the edges. The
southern strip is the widest, so its midline under the central block is the
landing spot with the best clearance/distance trade-off.
"""

import argparse
from pathlib import Path

import numpy as np
import yaml

COLUMNS = [(100, 190), (210, 300), (320, 410), (430, 570), (590, 680), (700, 790), (810, 900)]
ROWS = [(202, 330), (350, 470), (490, 610), (630, 740), (760, 840)]


def city_map(seed: int = 7) -> dict:
    rng = np.random.default_rng(seed)
    obstacles = []
    for j, (y0, y1) in enumerate(ROWS):
        for i, (x0, x1) in enumerate(COLUMNS):
            height = float(np.round(rng.uniform(40, 300)))
            if (i, j) == (3, 2):
                # the block under the failure point stays below the flight level
                height = 120.0
            if (i, j) == (3, 0):
                # tall tower in front of the landing strip forces a detour
                height = 320.0
            obstacles.append({"name": f"block_{i}_{j}", "min": [x0, y0, 0.0], "max": [x1, y1, height]})
    return {
        "bounds": {"min": [0.0, 0.0, 0.0], "max": [1000.0, 1000.0, 600.0]},
        "grid_step": 1.0,
        "inflation": 2.0,
        "obstacles": obstacles,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    default = Path(__file__).resolve().parents[1] / "src" / "quadfail" / "data" / "city_map.yaml"
    ap.add_argument("--out", type=Path, default=default)
    args = ap.parse_args()
    args.out.write_text(yaml.safe_dump(city_map(), sort_keys=False, default_flow_style=None))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
