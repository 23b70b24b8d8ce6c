"""Cuboid world map, ground-plane Voronoi landing-spot search, and RRT* paths."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .params import ConfigError


class PlannerError(RuntimeError):
    pass


class PathNotFound(PlannerError):
    """The tree never connected the goal region; ``tree`` holds what was built."""

    def __init__(self, message: str, tree: Tree | None = None):
        super().__init__(message)
        self.tree = tree


@dataclass(frozen=True)
class Cuboid:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    name: str = ""

    def __post_init__(self):
        if len(self.lo) != 3 or len(self.hi) != 3:
            raise ConfigError("cuboid corners need three coordinates")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ConfigError(f"degenerate cuboid {self.name or (self.lo, self.hi)}")


@dataclass
class WorldMap:
    """Axis-aligned bounds plus cuboid obstacles, all in metres."""

    lo: np.ndarray
    hi: np.ndarray
    obstacles: list[Cuboid] = field(default_factory=list)
    grid_step: float = 1.0
    inflation: float = 2.0

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.grid_step <= 0:
            raise ConfigError("grid_step must be positive")
        if self.inflation < 0:
            raise ConfigError("inflation must be non-negative")
        if np.any(self.hi <= self.lo):
            raise ConfigError("map bounds are degenerate")
        for ob in self.obstacles:
            clipped_lo = np.maximum(ob.lo, self.lo)
            clipped_hi = np.minimum(ob.hi, self.hi)
            if np.any(clipped_hi <= clipped_lo):
                raise ConfigError(f"obstacle {ob.name or ob.lo} does not intersect the map bounds")
        self._boxes_lo = np.array([o.lo for o in self.obstacles], dtype=float).reshape(-1, 3)
        self._boxes_hi = np.array([o.hi for o in self.obstacles], dtype=float).reshape(-1, 3)

    @property
    def inflated_boxes(self) -> tuple[np.ndarray, np.ndarray]:
        return self._boxes_lo - self.inflation, self._boxes_hi + self.inflation

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def point_collides(self, p) -> bool:
        lo, hi = self.inflated_boxes
        p = np.asarray(p, dtype=float)
        return bool(np.any(np.all((p >= lo) & (p <= hi), axis=1)))

    def to_dict(self) -> dict:
        return {
            "bounds": {"min": self.lo.tolist(), "max": self.hi.tolist()},
            "grid_step": self.grid_step,
            "inflation": self.inflation,
            "obstacles": [
                {"name": o.name, "min": list(o.lo), "max": list(o.hi)} for o in self.obstacles
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> WorldMap:
        if not isinstance(data, dict):
            raise ConfigError("map root must be a mapping")
        extra = set(data) - {"bounds", "grid_step", "inflation", "obstacles"}
        if extra:
            raise ConfigError(f"unknown key '{sorted(extra)[0]}'")
        try:
            b = data["bounds"]
            lo, hi = b["min"], b["max"]
        except (KeyError, TypeError) as exc:
            raise ConfigError("map needs bounds.min and bounds.max") from exc
        obstacles = []
        for k, ob in enumerate(data.get("obstacles") or []):
            try:
                obstacles.append(Cuboid(tuple(ob["min"]), tuple(ob["max"]), str(ob.get("name", f"ob{k}"))))
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"obstacle {k} needs min and max corners") from exc
        return cls(
            lo,
            hi,
            obstacles,
            float(data.get("grid_step", 1.0)),
            float(data.get("inflation", 2.0)),
        )


def load_map(path: str | Path | None = None) -> WorldMap:
    """Load a YAML map; ``None`` gives the bundled city map."""
    if path is None:
        text = resources.files("quadfail.data").joinpath("city_map.yaml").read_text()
    else:
        text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse map: {exc}") from exc
    return WorldMap.from_dict(data)


# ---------------------------------------------------------------- GVD


@dataclass
class GvdField:
    """Ground-plane grid. Sources 0..N-1 are obstacles, N..N+3 the walls
    x-min, x-max, y-min, y-max."""

    xs: np.ndarray
    ys: np.ndarray
    clearance: np.ndarray  # (nx, ny)
    source: np.ndarray  # (nx, ny) int
    is_gvd: np.ndarray  # (nx, ny) bool

    def cells(self) -> np.ndarray:
        """GVD cells as rows (x, y, clearance)."""
        ii, jj = np.nonzero(self.is_gvd)
        return np.column_stack([self.xs[ii], self.ys[jj], self.clearance[ii, jj]])

    def write_csv(self, fh, header_lines=()):
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "clearance", "source"])
        ii, jj = np.nonzero(self.is_gvd)
        for i, j in zip(ii, jj):
            w.writerow([f"{self.xs[i]:.6g}", f"{self.ys[j]:.6g}", f"{self.clearance[i, j]:.6g}", int(self.source[i, j])])


def _rect_distance(X, Y, lo, hi):
    dx = np.maximum(np.maximum(lo[0] - X, X - hi[0]), 0.0)
    dy = np.maximum(np.maximum(lo[1] - Y, Y - hi[1]), 0.0)
    return np.hypot(dx, dy)


def build_gvd(world: WorldMap, boundary_sources: bool = True) -> GvdField:
    """Nearest-source labelling of the ground grid and its discrete ridges.

    Distances use obstacle footprints (uninflated). A free cell is on the
    diagram when any of its 8 neighbours has a different nearest source.
    """
    step = world.grid_step
    xs = world.lo[0] + step * np.arange(int(math.floor((world.hi[0] - world.lo[0]) / step + 1e-9)) + 1)
    ys = world.lo[1] + step * np.arange(int(math.floor((world.hi[1] - world.lo[1]) / step + 1e-9)) + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    n_src = len(world.obstacles) + (4 if boundary_sources else 0)
    if n_src < 2:
        raise PlannerError("need at least two clearance sources for a Voronoi diagram")

    best = np.full(X.shape, np.inf)
    source = np.full(X.shape, -1, dtype=int)
    inside = np.zeros(X.shape, dtype=bool)

    def offer(dist, idx):
        better = dist < best
        best[better] = dist[better]
        source[better] = idx

    for k, ob in enumerate(world.obstacles):
        d = _rect_distance(X, Y, ob.lo, ob.hi)
        inside |= d == 0.0
        offer(d, k)
    if boundary_sources:
        base = len(world.obstacles)
        offer(X - world.lo[0], base)
        offer(world.hi[0] - X, base + 1)
        offer(Y - world.lo[1], base + 2)
        offer(world.hi[1] - Y, base + 3)

    free = (~inside) & (best > 0)
    if not free.any():
        raise PlannerError("map is fully covered by obstacles")

    differs = np.zeros(X.shape, dtype=bool)
    padded = np.pad(source, 1, mode="edge")
    nx, ny = X.shape
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            neigh = padded[1 + di : 1 + di + nx, 1 + dj : 1 + dj + ny]
            differs |= neigh != source
    return GvdField(xs, ys, best, source, differs & free)


@dataclass(frozen=True)
class LandingSpot:
    position: tuple[float, float, float]
    clearance: float
    distance: float
    cost: float


def landing_costs(gvd: GvdField, vehicle_xy, a: float, b: float):
    """Per-GVD-cell arrays (x, y, r, d, J)."""
    cells = gvd.cells()
    x, y, r = cells[:, 0], cells[:, 1], cells[:, 2]
    d = np.hypot(x - vehicle_xy[0], y - vehicle_xy[1])
    return x, y, r, d, a / r + b * d


def select_landing_spot(gvd: GvdField, vehicle_xy, a: float, b: float) -> LandingSpot:
    """Minimise a/r + b*d over the diagram; ties go to the nearer cell, then to (x, y) order."""
    if a < 0 or b < 0 or (a == 0 and b == 0):
        raise ValueError("weights must be non-negative and not both zero")
    if not gvd.is_gvd.any():
        raise PlannerError("empty Voronoi diagram")
    x, y, r, d, J = landing_costs(gvd, vehicle_xy, a, b)
    order = np.lexsort((y, x, d, J))
    k = order[0]
    return LandingSpot((float(x[k]), float(y[k]), 0.0), float(r[k]), float(d[k]), float(J[k]))


# ---------------------------------------------------------------- collision


def segment_collides(p0, p1, world: WorldMap) -> bool:
    """Exact slab test of the closed segment against the inflated cuboids."""
    lo, hi = world.inflated_boxes
    if len(lo) == 0:
        return False
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    t_lo = np.zeros(len(lo))
    t_hi = np.ones(len(lo))
    ok = np.ones(len(lo), dtype=bool)
    for ax in range(3):
        if d[ax] == 0.0:
            ok &= (p0[ax] >= lo[:, ax]) & (p0[ax] <= hi[:, ax])
            continue
        # tiny components overflow to +-inf, which the interval logic handles
        with np.errstate(over="ignore"):
            ta = (lo[:, ax] - p0[ax]) / d[ax]
            tb = (hi[:, ax] - p0[ax]) / d[ax]
        t_lo = np.maximum(t_lo, np.minimum(ta, tb))
        t_hi = np.minimum(t_hi, np.maximum(ta, tb))
    return bool(np.any(ok & (t_lo <= t_hi)))


def path_clearance(points, world: WorldMap) -> float:
    """Smallest distance from any point to any uninflated obstacle."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if not world.obstacles:
        return math.inf
    lo, hi = world._boxes_lo, world._boxes_hi
    gap = np.maximum(np.maximum(lo[None] - pts[:, None], pts[:, None] - hi[None]), 0.0)
    return float(np.sqrt((gap**2).sum(axis=2)).min())


# ---------------------------------------------------------------- RRT*


@dataclass(frozen=True)
class RrtParams:
    step: float = 50.0
    rewire_radius: float = 150.0
    mode: str = "until-found"  # or "fixed"
    max_samples: int = 2000
    seed: int = 0
    goal_bias: float = 0.05
    max_iterations: int = 200_000

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.rewire_radius < self.step:
            raise ValueError("rewire_radius must be at least the step")
        if self.mode not in ("until-found", "fixed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_samples < 1:
            raise ValueError("max_samples must be positive")
        if not 0 <= self.goal_bias < 1:
            raise ValueError("goal_bias must lie in [0, 1)")


@dataclass
class Tree:
    nodes: np.ndarray  # (N, 3)
    parent: np.ndarray  # (N,) int, -1 at the root
    cost: np.ndarray  # (N,)
    iterations: int = 0

    def __len__(self):
        return len(self.nodes)

    def branch(self, k: int) -> list[int]:
        chain = []
        while k >= 0:
            chain.append(k)
            k = int(self.parent[k])
        return chain[::-1]

    def write_csv(self, fh, header_lines=()):
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "parent", "x", "y", "z", "px", "py", "pz", "cost"])
        for k in range(len(self.nodes)):
            p = int(self.parent[k])
            pp = self.nodes[p] if p >= 0 else (math.nan,) * 3
            w.writerow([k, p, *(f"{v:.9g}" for v in self.nodes[k]), *(f"{v:.9g}" for v in pp), f"{self.cost[k]:.9g}"])


@dataclass
class PlannedPath:
    waypoints: np.ndarray  # (M, 3)
    seed: int = 0
    vertex_count: int = 0
    iterations: int = 0

    @property
    def total_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())

    def write_csv(self, fh, header_lines=()):
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "x", "y", "z"])
        for k, p in enumerate(self.waypoints):
            w.writerow([k, *(f"{v:.9g}" for v in p)])


def _grow(buf: np.ndarray, n: int) -> np.ndarray:
    if n < len(buf):
        return buf
    new = np.empty((2 * len(buf),) + buf.shape[1:], dtype=buf.dtype)
    new[: len(buf)] = buf
    return new


def rrt_star(world: WorldMap, start, goal, params: RrtParams = RrtParams()) -> tuple[PlannedPath, Tree]:
    """Grow an RRT* tree from ``start``; the goal region is a ball of radius step/2.

    ``until-found`` stops as soon as a node in the goal region can see the
    goal. ``fixed`` grows exactly ``max_samples`` vertices, then returns the
    cheapest connection. The final waypoint is always the exact goal.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    for name, p in (("start", start), ("goal", goal)):
        if not world.contains(p):
            raise PlannerError(f"{name} {p.tolist()} lies outside the map bounds")
        if world.point_collides(p):
            raise PlannerError(f"{name} {p.tolist()} lies inside an inflated obstacle")

    rng = np.random.default_rng(params.seed)
    goal_radius = params.step / 2
    bias = params.goal_bias if params.mode == "until-found" else 0.0
    target = params.max_samples if params.mode == "fixed" else None

    nodes = np.empty((1024, 3))
    parent = np.empty(1024, dtype=int)
    cost = np.empty(1024)
    nodes[0], parent[0], cost[0] = start, -1, 0.0
    n = 1
    # nodes in the goal region with a clear final segment
    goal_links: list[int] = []
    if np.linalg.norm(goal - start) <= goal_radius and not segment_collides(start, goal, world):
        goal_links.append(0)

    def finished():
        if params.mode == "until-found":
            return bool(goal_links)
        return n >= target

    it = 0
    while not finished():
        if it >= params.max_iterations:
            tree = Tree(nodes[:n].copy(), parent[:n].copy(), cost[:n].copy(), it)
            raise PathNotFound(f"iteration cap {params.max_iterations} reached without a path", tree)
        it += 1
        sample = goal if rng.random() < bias else rng.uniform(world.lo, world.hi)
        diff = nodes[:n] - sample
        dist2 = np.einsum("ij,ij->i", diff, diff)
        near_idx = int(np.argmin(dist2))
        vec = sample - nodes[near_idx]
        length = math.sqrt(dist2[near_idx])
        if length == 0.0:
            continue
        new = nodes[near_idx] + vec * min(1.0, params.step / length)
        if segment_collides(nodes[near_idx], new, world):
            continue

        diff = nodes[:n] - new
        dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        near = np.flatnonzero(dists <= params.rewire_radius)
        # choose parent
        best_p, best_c = near_idx, cost[near_idx] + dists[near_idx]
        for j in near[np.argsort(cost[near] + dists[near], kind="stable")]:
            c = cost[j] + dists[j]
            if c >= best_c:
                break
            if not segment_collides(nodes[j], new, world):
                best_p, best_c = int(j), c
                break
        nodes = _grow(nodes, n)
        parent = _grow(parent, n)
        cost = _grow(cost, n)
        k = n
        nodes[k], parent[k], cost[k] = new, best_p, best_c
        n += 1
        # rewire
        for j in near:
            if j == best_p:
                continue
            c = best_c + dists[j]
            if c < cost[j] and not segment_collides(new, nodes[j], world):
                delta = c - cost[j]
                parent[j] = k
                # propagate the saving to the subtree
                stack = [int(j)]
                while stack:
                    m = stack.pop()
                    cost[m] += delta
                    stack.extend(np.flatnonzero(parent[:n] == m).tolist())
        if np.linalg.norm(goal - new) <= goal_radius and not segment_collides(new, goal, world):
            goal_links.append(k)

    tree = Tree(nodes[:n].copy(), parent[:n].copy(), cost[:n].copy(), it)
    if not goal_links:
        raise PathNotFound(f"goal region not reached with {n} vertices", tree)
    totals = [tree.cost[k] + np.linalg.norm(goal - tree.nodes[k]) for k in goal_links]
    best = goal_links[int(np.argmin(totals))]
    pts = tree.nodes[tree.branch(best)]
    if np.linalg.norm(pts[-1] - goal) > 0:
        pts = np.vstack([pts, goal])
    return PlannedPath(pts, params.seed, n, it), tree


def shortcut_path(path: PlannedPath, world: WorldMap) -> PlannedPath:
    """Shortest route through a subsequence of the path's vertices."""
    pts = np.asarray(path.waypoints, dtype=float)
    m = len(pts)
    if m <= 2:
        return PlannedPath(pts.copy(), path.seed, path.vertex_count, path.iterations)
    best = np.full(m, np.inf)
    prev = np.full(m, -1, dtype=int)
    best[0] = 0.0
    for j in range(1, m):
        for i in range(j):
            if not np.isfinite(best[i]):
                continue
            c = best[i] + float(np.linalg.norm(pts[j] - pts[i]))
            # original edges are kept even if a map change made them collide
            if c < best[j] and (i == j - 1 or not segment_collides(pts[i], pts[j], world)):
                best[j], prev[j] = c, i
    chain = [m - 1]
    while chain[-1] != 0:
        chain.append(int(prev[chain[-1]]))
    return PlannedPath(pts[chain[::-1]], path.seed, path.vertex_count, path.iterations)
