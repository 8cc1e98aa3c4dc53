"""RRT* in a 2D box world whose edge cost is the snap of a min-snap spline through the root path.

Every query solves a two-dimensional (x, y) variable-time subproblem over the
whole root path. Results are memoized by waypoint sequence, so the cached
per-vertex costs are exactly what a fresh solve would return.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .fixed_time import NumericalFailure
from .multidim import FlatTrajectory, MultiDimProblem, solve_multidim
from .spline_core import InvalidInputError
from .variable_time import OptimizerConfig

log = logging.getLogger(__name__)

SNAP_K = 5


class WorkspaceDegenerateError(InvalidInputError):
    """Raised when rejection sampling cannot find free space."""


@dataclass(frozen=True)
class Rect:
    """Closed axis-aligned rectangle."""

    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 2 or len(hi) != 2 or not all(a < b for a, b in zip(lo, hi)):
            raise InvalidInputError(f"bad rectangle {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def size(self) -> tuple[float, float]:
        return (self.hi[0] - self.lo[0], self.hi[1] - self.lo[1])

    def contains(self, pts: ArrayLike, margin: float = 0.0) -> NDArray[np.bool_]:
        p = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return (
            (p[:, 0] >= self.lo[0] - margin)
            & (p[:, 0] <= self.hi[0] + margin)
            & (p[:, 1] >= self.lo[1] - margin)
            & (p[:, 1] <= self.hi[1] + margin)
        )

    def intersects_segment(self, a: ArrayLike, b: ArrayLike) -> bool:
        """Liang-Barsky clip of the closed segment ab against the rectangle."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        t0, t1 = 0.0, 1.0
        d = b - a
        for axis in range(2):
            if d[axis] == 0.0:
                if a[axis] < self.lo[axis] or a[axis] > self.hi[axis]:
                    return False
                continue
            u = (self.lo[axis] - a[axis]) / d[axis]
            v = (self.hi[axis] - a[axis]) / d[axis]
            if u > v:
                u, v = v, u
            t0, t1 = max(t0, u), min(t1, v)
            if t0 > t1:
                return False
        return True


@dataclass(frozen=True)
class Workspace:
    bounds: Rect
    obstacles: tuple[Rect, ...] = ()

    def __post_init__(self) -> None:
        b = self.bounds if isinstance(self.bounds, Rect) else Rect(*np.asarray(self.bounds, dtype=float).T)
        obs = tuple(o if isinstance(o, Rect) else Rect(*o) for o in self.obstacles)
        for o in obs:
            if not (all(o.lo[i] >= b.lo[i] and o.hi[i] <= b.hi[i] for i in range(2))):
                raise InvalidInputError(f"obstacle {o} leaves the bounds")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "obstacles", obs)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(*self.bounds.size))

    def is_free(self, pts: ArrayLike, margin: float = 0.0) -> NDArray[np.bool_]:
        """Inside the bounds (shrunk by ``margin``) and outside every obstacle (grown by ``margin``)."""
        p = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        ok = self.bounds.contains(p, -margin)
        for o in self.obstacles:
            ok &= ~o.contains(p, margin)
        return ok

    def segment_free(self, a: ArrayLike, b: ArrayLike) -> bool:
        if not self.is_free(np.vstack([a, b])).all():
            return False
        return not any(o.intersects_segment(a, b) for o in self.obstacles)


@dataclass
class Framework:
    """Tree embedded in the plane; vertex 0 is the root."""

    points: list[NDArray[np.float64]] = field(default_factory=list)
    parent: list[int] = field(default_factory=list)
    cost: list[float | None] = field(default_factory=list)

    @classmethod
    def rooted(cls, start: ArrayLike) -> Framework:
        return cls([np.asarray(start, dtype=np.float64).copy()], [-1], [0.0])

    def __len__(self) -> int:
        return len(self.points)

    @property
    def positions(self) -> NDArray[np.float64]:
        return np.asarray(self.points)

    def add(self, point: ArrayLike, parent: int, cost: float | None) -> int:
        self.points.append(np.asarray(point, dtype=np.float64).copy())
        self.parent.append(parent)
        self.cost.append(cost)
        return len(self.points) - 1

    def path(self, i: int) -> list[int]:
        out = [i]
        while self.parent[out[-1]] >= 0:
            out.append(self.parent[out[-1]])
            if len(out) > len(self):
                raise RuntimeError("cycle in framework")
        return out[::-1]

    def is_ancestor(self, a: int, b: int) -> bool:
        """True when ``a`` lies on the root path of ``b`` (``a == b`` included)."""
        while b >= 0:
            if b == a:
                return True
            b = self.parent[b]
        return False

    def descendants(self, i: int) -> list[int]:
        children: dict[int, list[int]] = {}
        for v, p in enumerate(self.parent):
            children.setdefault(p, []).append(v)
        out, stack = [], list(children.get(i, []))
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(children.get(v, []))
        return sorted(out)

    def waypoints(self, i: int, extra: ArrayLike | None = None) -> NDArray[np.float64]:
        pts = [self.points[j] for j in self.path(i)]
        if extra is not None:
            pts.append(np.asarray(extra, dtype=np.float64))
        return np.asarray(pts)


@dataclass(frozen=True)
class PlannerConfig:
    """Planner settings. ``near_radius`` and ``collision_dt`` default from the workspace."""

    max_iters: int = 100
    near_radius: float | None = None
    speed: float = 1.0
    collision_dt: float | None = None
    seed: int = 0
    goal: Rect | None = None
    subproblem: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(metric="duration", max_iters=8, tol=1e-6)
    )
    check_subtree: bool = True

    def __post_init__(self) -> None:
        if self.max_iters < 0:
            raise InvalidInputError("max_iters must be >= 0")
        if self.near_radius is not None and not self.near_radius > 0:
            raise InvalidInputError("near_radius must be positive")
        if self.collision_dt is not None and not self.collision_dt > 0:
            raise InvalidInputError("collision_dt must be positive")
        if not self.speed > 0:
            raise InvalidInputError("speed must be positive")
        if self.goal is not None and not isinstance(self.goal, Rect):
            object.__setattr__(self, "goal", Rect(*self.goal))

    def resolved(self, ws: Workspace) -> PlannerConfig:
        eps = self.near_radius if self.near_radius is not None else 0.25 * ws.diagonal
        dt = self.collision_dt
        if dt is None:
            sizes = [min(o.size) for o in ws.obstacles] or [ws.diagonal]
            # rest-to-rest min-snap profiles peak near 2.5x the mean speed
            dt = 0.05 * min(sizes) / (2.5 * self.speed)
        return replace(self, near_radius=eps, collision_dt=dt)


# ---------------------------------------------------------------------------
# Sampling and nearest neighbour
# ---------------------------------------------------------------------------


def sample_free(ws: Workspace, rng: np.random.Generator, max_rejections: int = 10_000) -> NDArray[np.float64]:
    lo, hi = np.array(ws.bounds.lo), np.array(ws.bounds.hi)
    for _ in range(max_rejections):
        p = lo + (hi - lo) * rng.random(2)
        if ws.is_free(p)[0]:
            return p
    raise WorkspaceDegenerateError(f"no free sample after {max_rejections} draws")


def nearest(fw: Framework, point: ArrayLike) -> int:
    # argmin returns the first minimum, i.e. the lowest index on ties
    dist = np.linalg.norm(fw.positions - np.asarray(point, dtype=np.float64), axis=1)
    return int(np.argmin(dist))


def near(fw: Framework, point: ArrayLike, radius: float, exclude: int | None = None) -> list[int]:
    dist = np.linalg.norm(fw.positions - np.asarray(point, dtype=np.float64), axis=1)
    return [int(i) for i in np.flatnonzero(dist < radius) if i != exclude]


# ---------------------------------------------------------------------------
# Subproblem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SnapResult:
    ok: bool
    cost: float
    trajectory: FlatTrajectory | None = None
    d: NDArray[np.float64] | None = None


def rest_to_rest_pins(values: Sequence[float], k: int = SNAP_K) -> list[tuple[int, int, float]]:
    l = len(values) - 1
    pins = [(j, 0, float(v)) for j, v in enumerate(values)]
    pins += [(0, q, 0.0) for q in range(1, k)]
    pins += [(l, q, 0.0) for q in range(1, k)]
    return pins


def solve_waypoints(
    waypoints: ArrayLike, speed: float, sub: OptimizerConfig, d0: ArrayLike | None = None
) -> SnapResult:
    """Min-snap x/y splines through ``waypoints`` at rest on both ends, total time = length / speed.

    ``d0`` is the starting schedule; by default durations are proportional to
    segment lengths. It is rescaled onto the fixed total.
    """
    wp = np.asarray(waypoints, dtype=np.float64)
    if wp.ndim != 2 or wp.shape[0] < 2 or wp.shape[1] != 2:
        raise InvalidInputError("need at least two 2D waypoints")
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    if not np.all(seg > 0):
        return SnapResult(False, np.inf)
    total = float(seg.sum()) / speed
    d0 = seg if d0 is None else np.asarray(d0, dtype=np.float64)
    d0 = 0.5 * total * d0 / d0.sum()
    config = replace(sub, mode="fixed-total", total_time=total)
    dims = [("x", SNAP_K, rest_to_rest_pins(wp[:, 0])), ("y", SNAP_K, rest_to_rest_pins(wp[:, 1]))]
    try:
        problem = MultiDimProblem.from_durations(dims, d0, config)
        traj, d_star, _ = solve_multidim(problem)
    except (NumericalFailure, InvalidInputError) as exc:
        log.debug("subproblem failed: %s", exc)
        return SnapResult(False, np.inf)
    if not np.isfinite(traj.cost):
        return SnapResult(False, np.inf)
    return SnapResult(True, max(traj.cost, 0.0), traj, d_star)


def solve_path(
    waypoints: ArrayLike, speed: float, sub: OptimizerConfig, memo: dict[bytes, SnapResult] | None = None
) -> SnapResult:
    """``solve_waypoints`` warm-started from the solution for the path without its last point.

    The start schedule is the prefix optimum extended by a constant-speed
    guess for the new segment, so the result depends only on the waypoint
    sequence and memoized and fresh answers coincide.
    """
    wp = np.ascontiguousarray(waypoints, dtype=np.float64)
    key = wp.tobytes()
    if memo is not None and key in memo:
        return memo[key]
    d0 = None
    if wp.shape[0] > 2:
        prefix = solve_path(wp[:-1], speed, sub, memo)
        if prefix.ok:
            d0 = np.append(prefix.d, 0.5 * np.linalg.norm(wp[-1] - wp[-2]) / speed)
    res = solve_waypoints(wp, speed, sub, d0)
    if memo is not None:
        memo[key] = res
    return res


def trajectory_free(ws: Workspace, traj: FlatTrajectory, dt: float, inflate: bool = True) -> bool:
    """Sampled check at step ``dt`` plus every knot.

    With ``inflate`` the obstacles grow (and the bounds shrink) by the distance
    the trajectory can travel between samples, so a passing check also covers
    the gaps.
    """
    t = traj.times.t
    n = max(int(np.ceil((t[-1] - t[0]) / dt)), 1)
    tau = np.union1d(np.linspace(t[0], t[-1], n + 1), t)
    sx, sy = traj["x"], traj["y"]
    pts = np.column_stack([sx.eval(tau), sy.eval(tau)])
    margin = 0.0
    if inflate:
        vmax = float(np.max(np.hypot(sx.eval(tau, 1), sy.eval(tau, 1))))
        margin = 0.5 * np.max(np.diff(tau)) * 1.25 * vmax
    return bool(ws.is_free(pts, margin).all())


class SnapOracle:
    """Memoized CollisionFree / Cost queries keyed by waypoint sequence."""

    def __init__(self, ws: Workspace, config: PlannerConfig):
        self.ws = ws
        self.config = config.resolved(ws)
        self._memo: dict[bytes, SnapResult] = {}
        self._free: dict[bytes, bool] = {}

    @property
    def solves(self) -> int:
        return len(self._memo)

    def query(self, waypoints: NDArray[np.float64]) -> tuple[SnapResult, bool]:
        wp = np.ascontiguousarray(waypoints, dtype=np.float64)
        key = wp.tobytes()
        res = solve_path(wp, self.config.speed, self.config.subproblem, self._memo)
        free = self._free.get(key)
        if free is None:
            free = res.ok and trajectory_free(self.ws, res.trajectory, self.config.collision_dt)
            self._free[key] = free
        return res, free

    def collision_free(self, fw: Framework, i_h: int, u: ArrayLike) -> bool:
        return self.query(fw.waypoints(i_h, u))[1]

    def cost(self, fw: Framework, i_h: int, u: ArrayLike) -> float:
        res = self.query(fw.waypoints(i_h, u))[0]
        return res.cost if res.ok else np.inf

    def vertex_cost(self, fw: Framework, i: int) -> float:
        if fw.cost[i] is None:
            fw.cost[i] = 0.0 if i == 0 else self.cost(fw, fw.parent[i], fw.points[i])
        return fw.cost[i]

    def vertex_free(self, fw: Framework, i: int) -> bool:
        return i == 0 or self.collision_free(fw, fw.parent[i], fw.points[i])


def min_snap_subproblem(
    ws: Workspace, fw: Framework, i_h: int, u: ArrayLike, config: PlannerConfig
) -> SnapResult:
    """Spline pair and snap for the root path through ``i_h`` extended by ``u``."""
    return solve_path(fw.waypoints(i_h, u), config.speed, config.subproblem)


def collision_free(ws: Workspace, fw: Framework, i_h: int, u: ArrayLike, config: PlannerConfig) -> bool:
    cfg = config.resolved(ws)
    res = min_snap_subproblem(ws, fw, i_h, u, cfg)
    return res.ok and trajectory_free(ws, res.trajectory, cfg.collision_dt)


def snap_cost(ws: Workspace, fw: Framework, i_h: int, u: ArrayLike, config: PlannerConfig) -> float:
    res = min_snap_subproblem(ws, fw, i_h, u, config)
    return res.cost if res.ok else np.inf


# ---------------------------------------------------------------------------
# Planners
# ---------------------------------------------------------------------------


@dataclass
class PlanResult:
    framework: Framework
    best_vertex: int | None
    trajectory: FlatTrajectory | None
    snap: float
    wall_time: float
    solves: int = 0

    @property
    def reached_goal(self) -> bool:
        return self.trajectory is not None


def _check_start(ws: Workspace, start: ArrayLike) -> NDArray[np.float64]:
    start = np.asarray(start, dtype=np.float64)
    if start.shape != (2,) or not ws.is_free(start)[0]:
        raise InvalidInputError(f"start {start} is not in free space")
    return start


def _subtree_free(oracle: SnapOracle, fw: Framework, i: int, new_parent: int) -> bool:
    old = fw.parent[i]
    fw.parent[i] = new_parent
    try:
        return all(oracle.vertex_free(fw, v) for v in fw.descendants(i))
    finally:
        fw.parent[i] = old


def _invalidate(fw: Framework, i: int) -> None:
    for v in fw.descendants(i):
        fw.cost[v] = None


def plan(ws: Workspace, start: ArrayLike, config: PlannerConfig | None = None) -> PlanResult:
    """Min-snap RRT*: sample, gate on the nearest vertex, choose the parent, rewire."""
    t0 = time.perf_counter()
    config = (config or PlannerConfig()).resolved(ws)
    fw = Framework.rooted(_check_start(ws, start))
    oracle = SnapOracle(ws, config)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.max_iters):
        v_rand = sample_free(ws, rng)
        i_nearest = nearest(fw, v_rand)
        if not oracle.collision_free(fw, i_nearest, v_rand):
            continue
        i_min, c_min = i_nearest, oracle.cost(fw, i_nearest, v_rand)
        v_near = near(fw, v_rand, config.near_radius)
        for i in v_near:
            if i == i_nearest:
                continue
            if oracle.collision_free(fw, i, v_rand):
                c = oracle.cost(fw, i, v_rand)
                if c < c_min:
                    i_min, c_min = i, c
        new = fw.add(v_rand, i_min, c_min)
        for i in v_near:
            # rewiring an ancestor of the new vertex would close a cycle
            if fw.is_ancestor(i, new):
                continue
            if not oracle.collision_free(fw, new, fw.points[i]):
                continue
            c = oracle.cost(fw, new, fw.points[i])
            if c < oracle.vertex_cost(fw, i):
                if config.check_subtree and not _subtree_free(oracle, fw, i, new):
                    continue
                fw.parent[i] = new
                fw.cost[i] = c
                _invalidate(fw, i)
    # rewires leave costs below them stale; refresh so every vertex reports its cost
    for i in range(len(fw)):
        oracle.vertex_cost(fw, i)
    best, traj, snap = _extract(ws, fw, oracle, config)
    return PlanResult(fw, best, traj, snap, time.perf_counter() - t0, oracle.solves)


def _extract(
    ws: Workspace, fw: Framework, oracle: SnapOracle, config: PlannerConfig
) -> tuple[int | None, FlatTrajectory | None, float]:
    if config.goal is None:
        return None, None, np.inf
    inside = np.flatnonzero(config.goal.contains(fw.positions))
    candidates = sorted((oracle.vertex_cost(fw, int(i)), int(i)) for i in inside if i != 0)
    for c, i in candidates:
        if not np.isfinite(c) or not oracle.vertex_free(fw, i):
            continue
        res = oracle.query(fw.waypoints(i))[0]
        return i, res.trajectory, res.cost
    return None, None, np.inf


def plan_euclidean_baseline(ws: Workspace, start: ArrayLike, config: PlannerConfig | None = None) -> PlanResult:
    """Straight-line RRT* on path length; the best goal path is then smoothed once, unchecked."""
    t0 = time.perf_counter()
    config = (config or PlannerConfig()).resolved(ws)
    fw = Framework.rooted(_check_start(ws, start))
    rng = np.random.default_rng(config.seed)
    for _ in range(config.max_iters):
        v_rand = sample_free(ws, rng)
        i_nearest = nearest(fw, v_rand)
        if not ws.segment_free(fw.points[i_nearest], v_rand):
            continue
        dist = lambda i: fw.cost[i] + float(np.linalg.norm(fw.points[i] - v_rand))  # noqa: E731
        i_min, c_min = i_nearest, dist(i_nearest)
        v_near = near(fw, v_rand, config.near_radius)
        for i in v_near:
            if ws.segment_free(fw.points[i], v_rand) and dist(i) < c_min:
                i_min, c_min = i, dist(i)
        new = fw.add(v_rand, i_min, c_min)
        for i in v_near:
            if fw.is_ancestor(i, new):
                continue
            c = c_min + float(np.linalg.norm(fw.points[i] - v_rand))
            if c < fw.cost[i] and ws.segment_free(v_rand, fw.points[i]):
                delta = fw.cost[i] - c
                fw.parent[i] = new
                fw.cost[i] = c
                for v in fw.descendants(i):
                    fw.cost[v] -= delta
    best, traj, snap = None, None, np.inf
    if config.goal is not None:
        inside = [int(i) for i in np.flatnonzero(config.goal.contains(fw.positions)) if i != 0]
        if inside:
            best = min(inside, key=lambda i: (fw.cost[i], i))
            res = solve_path(fw.waypoints(best), config.speed, config.subproblem)
            traj, snap = res.trajectory, res.cost
    return PlanResult(fw, best, traj, snap, time.perf_counter() - t0)


def path_trajectory_free(ws: Workspace, traj: FlatTrajectory, dt: float) -> bool:
    """Uninflated sampled check, used for fine-resolution rechecks."""
    return trajectory_free(ws, traj, dt, inflate=False)


def arena() -> tuple[Workspace, NDArray[np.float64], Rect]:
    """Shipped 10 m x 10 m test world: workspace, start and goal box."""
    ws = Workspace(
        Rect((0.0, 0.0), (10.0, 10.0)),
        (
            Rect((3.5, 3.5), (6.5, 6.5)),
            Rect((1.5, 6.0), (2.5, 9.0)),
            Rect((6.0, 1.0), (9.0, 2.0)),
        ),
    )
    return ws, np.array([1.0, 1.0]), Rect((7.5, 7.5), (9.5, 9.5))
