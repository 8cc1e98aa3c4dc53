"""Benchmark harness: solver scaling, J-evaluation counts, conditioning, planner comparison.

Each bench returns plain rows so the CLI and the scripts can write them as CSV.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from math import factorial
from typing import Iterable, Sequence

import mpmath
import numpy as np
from numpy.typing import NDArray

from .fixed_time import (
    FixedTimeProblem,
    FixedTimeSolution,
    NumericalFailure,
    reduced_kkt,
    solve_fixed_time,
)
from .rrt_star import PlannerConfig, arena, path_trajectory_free, plan, plan_euclidean_baseline
from .spline_core import InvalidInputError, Pin, TimeAllocation
from .variable_time import METHODS, OptimizerConfig, solve_variable_time

# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------


def random_instance(
    rng: np.random.Generator,
    k: int,
    l: int,
    delta_range: tuple[float, float] = (0.1, 10.0),
    tau0: float = 0.0,
) -> FixedTimeProblem:
    """Full derivative stacks pinned at both ends, values pinned at interior knots."""
    d = rng.uniform(*delta_range, size=l)
    times = TimeAllocation.from_durations(d, tau0)
    pins = [Pin(0, q, float(rng.normal())) for q in range(k)]
    pins += [Pin(l, q, float(rng.normal())) for q in range(k)]
    pins += [Pin(i, 0, float(rng.normal())) for i in range(1, l)]
    return FixedTimeProblem(k, times, pins)


def rest_to_rest_instance(waypoints: Sequence[float], d0: Sequence[float], k: int = 5) -> FixedTimeProblem:
    l = len(waypoints) - 1
    pins = [Pin(j, 0, float(v)) for j, v in enumerate(waypoints)]
    pins += [Pin(0, q, 0.0) for q in range(1, k)] + [Pin(l, q, 0.0) for q in range(1, k)]
    return FixedTimeProblem(k, TimeAllocation.from_durations(d0), pins)


def jevals_instance(l: int, trial: int, k: int = 5) -> FixedTimeProblem:
    """Rest-to-rest waypoints drawn from U(-5, 5), started from constant-speed durations."""
    rng = np.random.default_rng([l, trial])
    wp = rng.uniform(-5.0, 5.0, l + 1)
    d0 = np.abs(np.diff(wp)) + 0.1
    return rest_to_rest_instance(wp, d0 / d0.mean(), k)


# ---------------------------------------------------------------------------
# Solver scaling
# ---------------------------------------------------------------------------


def bench_scaling(k: int, ls: Iterable[int], reps: int = 5, seed: int = 0) -> list[tuple[int, float, int]]:
    """Rows (l, median_ms, reps) over the given segment counts.

    Repetitions are interleaved across sizes, so slow drift in machine load
    spreads over every size instead of skewing one of them.
    """
    if reps < 3:
        raise InvalidInputError("reps must be >= 3")
    ls = [int(l) for l in ls]
    problems = [random_instance(np.random.default_rng([seed, l]), k, l, (0.5, 2.0)) for l in ls]
    for problem in problems:
        solve_fixed_time(problem)  # warm caches
    samples: list[list[float]] = [[] for _ in ls]
    for _ in range(reps):
        for problem, out in zip(problems, samples):
            t0 = time.perf_counter()
            solve_fixed_time(problem)
            out.append(time.perf_counter() - t0)
    return [(l, 1e3 * float(np.median(s)), reps) for l, s in zip(ls, samples)]


def loglog_slope(ls: Sequence[float], ms: Sequence[float]) -> float:
    return float(np.polyfit(np.log(ls), np.log(ms), 1)[0])


# ---------------------------------------------------------------------------
# J-evaluation counts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JevalsConfig:
    """Matched termination: stop at J <= (1 + rtol) J* or after ``budget`` evaluations.

    J* comes from a long exact-gradient reference run. Runs that exhaust the
    budget count as ``budget`` evaluations, so their contribution to the mean
    is a lower bound.
    """

    rtol: float = 1e-2
    budget: int = 1000
    k: int = 5
    metric: str = "duration"
    reference_iters: int = 3000


def reference_optimum(problem: FixedTimeProblem, cfg: JevalsConfig) -> float:
    config = OptimizerConfig(max_iters=cfg.reference_iters, tol=1e-12, metric=cfg.metric)
    _, _, trace = solve_variable_time(problem, config, "exact")
    return float(trace.entries[-1].objective)


def run_jevals_trial(l: int, trial: int, cfg: JevalsConfig) -> dict[str, tuple[int, bool]]:
    """Evaluation count and target flag per method for one seeded instance."""
    problem = jevals_instance(l, trial, cfg.k)
    target = reference_optimum(problem, cfg) * (1.0 + cfg.rtol)
    out = {}
    for method in METHODS:
        config = OptimizerConfig(
            max_iters=10 * cfg.budget,
            max_evals=cfg.budget,
            target_value=target,
            seed=trial,
            metric=cfg.metric,
        )
        _, _, trace = solve_variable_time(problem, config, method)
        out[method] = (min(trace.evals, cfg.budget), trace.reached_target)
    return out


def bench_jevals(
    ls: Iterable[int], trials: int, cfg: JevalsConfig | None = None
) -> list[tuple[int, str, float, float]]:
    """Rows (l, method, mean_J_evals, fraction_reached)."""
    cfg = cfg or JevalsConfig()
    rows = []
    for l in ls:
        results = [run_jevals_trial(l, t, cfg) for t in range(trials)]
        for method in METHODS:
            evals = [r[method][0] for r in results]
            reached = [r[method][1] for r in results]
            rows.append((int(l), method, float(np.mean(evals)), float(np.mean(reached))))
    return rows


# ---------------------------------------------------------------------------
# Conditioning: per-segment normalized form versus absolute-time monomials
# ---------------------------------------------------------------------------


def _falling(j: int, q: int) -> int:
    return factorial(j) // factorial(j - q) if q <= j else 0


def _abs_row(tau, q: int, n: int, zero=0.0) -> list:
    row = [zero] * n
    for j in range(q, n):
        row[j] = _falling(j, q) * tau ** (j - q)
    return row


def _absolute_kkt_lists(problem: FixedTimeProblem, num=float) -> tuple[list[list], list]:
    # entries built from ``num`` so the same code serves float64 and mpmath
    k, l = problem.k, problem.l
    n = 2 * k
    zero = num(0)
    t = [num(float(v)) for v in problem.times.t]
    rows, rhs = [], []
    for pin in problem.pins:
        seg = min(pin.knot, l - 1)
        row = [zero] * (l * n)
        row[seg * n : (seg + 1) * n] = _abs_row(t[pin.knot], pin.deriv, n, zero)
        rows.append(row)
        rhs.append(num(pin.value))
    for i in range(1, l):
        for q in range(k):
            row = [zero] * (l * n)
            r = _abs_row(t[i], q, n, zero)
            row[(i - 1) * n : i * n] = r
            row[i * n : (i + 1) * n] = [-v for v in r]
            rows.append(row)
            rhs.append(zero)
    m = len(rows)
    size = l * n + m
    K = [[zero] * size for _ in range(size)]
    for i in range(l):
        a, b = t[i], t[i + 1]
        for p in range(k - 1, n):
            for r in range(k - 1, n):
                e = p + r - 2 * (k - 1) + 1
                K[i * n + p][i * n + r] = 2 * _falling(p, k - 1) * _falling(r, k - 1) * (b**e - a**e) / e
    for c, row in enumerate(rows):
        for j, v in enumerate(row):
            K[l * n + c][j] = v
            K[j][l * n + c] = v
    return K, [zero] * (l * n) + rhs


def absolute_time_kkt(problem: FixedTimeProblem) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """KKT matrix and right-hand side for coefficients of tau^j on each segment.

    The cost block is twice the Gram matrix of the (k-1)-th derivatives. Each
    pin constrains one segment only (the one starting at the knot, the last
    segment for the final knot); continuity of derivatives 0..k-1 ties
    neighbours together.
    """
    K, rhs = _absolute_kkt_lists(problem)
    return np.array(K, dtype=np.float64), np.array(rhs, dtype=np.float64)


def solve_absolute_time(problem: FixedTimeProblem, dps: int | None = None) -> tuple[NDArray[np.float64], float]:
    """Absolute-time coefficients (l, 2k) and cost of the dense KKT solve.

    ``dps`` switches to an mpmath solve at that many decimal digits, which
    takes the monomial ill-conditioning out of equivalence checks.
    """
    n = 2 * problem.k
    nc = problem.l * n
    if dps is not None:
        with mpmath.workdps(dps):
            K, rhs = _absolute_kkt_lists(problem, mpmath.mpf)
            Km = mpmath.matrix(K)
            try:
                sol = mpmath.lu_solve(Km, mpmath.matrix(rhs))
            except ZeroDivisionError:
                raise NumericalFailure("absolute-time KKT matrix is singular") from None
            c = [sol[j] for j in range(nc)]
            cost = sum(c[a] * Km[a, b] * c[b] for a in range(nc) for b in range(nc) if Km[a, b] != 0) / 2
            return np.array([float(v) for v in c]).reshape(problem.l, n), float(cost)
    K, rhs = absolute_time_kkt(problem)
    # symmetric diagonal equilibration; the raw matrix spans many decades
    scale = 1.0 / np.sqrt(np.max(np.abs(K), axis=0))
    try:
        sol = scale * np.linalg.solve(scale[:, None] * K * scale[None, :], scale * rhs)
    except np.linalg.LinAlgError:
        raise NumericalFailure("absolute-time KKT matrix is singular") from None
    c = sol[:nc]
    if not np.all(np.isfinite(c)):
        raise NumericalFailure("absolute-time KKT solve produced non-finite values")
    cost = 0.5 * float(c @ K[:nc, :nc] @ c)
    return c.reshape(problem.l, n), cost


def eval_absolute(coeffs: NDArray[np.float64], tau: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.polynomial.polynomial.polyval(tau, coeffs)


def continuity_residual(sol: FixedTimeSolution) -> float:
    """Largest jump of derivatives 0..k-1 across interior knots, from the polynomial pieces."""
    f = sol.spline.endpoint_stacks()
    k = sol.spline.k
    if f.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(f[:-1, k:] - f[1:, :k])))


def bench_conditioning(l: int, shift: float, k: int = 5, seed: int = 0, dps: int | None = None) -> dict[str, float]:
    """Condition numbers of both KKT forms on one instance; cost gap where both solve.

    ``dps`` solves the absolute-time form in mpmath at that precision, which
    is only practical for small ``l``.
    """
    problem = random_instance(np.random.default_rng([seed, l]), k, l, (0.25, 1.0), tau0=shift)
    K_a, _, _ = reduced_kkt(problem)
    K_b, _ = absolute_time_kkt(problem)
    sol = solve_fixed_time(problem)
    out = {
        "l": float(l),
        "shift": float(shift),
        "cond_conditioned": float(np.linalg.cond(K_a)),
        "cond_absolute": float(np.linalg.cond(K_b)),
        "continuity_residual": continuity_residual(sol),
        "cost_conditioned": sol.cost,
        "cost_absolute": np.nan,
        "cost_gap": np.nan,
    }
    try:
        _, cost_b = solve_absolute_time(problem, dps)
    except NumericalFailure:
        return out
    if np.isfinite(cost_b):
        out["cost_absolute"] = cost_b
        out["cost_gap"] = abs(cost_b - sol.cost)
    return out


# ---------------------------------------------------------------------------
# Planner comparison
# ---------------------------------------------------------------------------


def bench_rrt(trials: int, max_iters: int = 150, seed: int = 0) -> list[dict[str, float | int | str | bool]]:
    """Per-trial rows for both planners in the shipped arena."""
    ws, start, goal = arena()
    rows = []
    for trial in range(trials):
        config = PlannerConfig(max_iters=max_iters, seed=seed + trial, goal=goal)
        fine_dt = config.resolved(ws).collision_dt / 10
        for method, planner in (("minsnap", plan), ("euclidean", plan_euclidean_baseline)):
            res = planner(ws, start, config)
            rechecked = res.trajectory is not None and path_trajectory_free(ws, res.trajectory, fine_dt)
            rows.append(
                {
                    "trial": trial,
                    "method": method,
                    "total_snap": res.snap,
                    "wall_ms": 1e3 * res.wall_time,
                    "reached": res.reached_goal,
                    "recheck_free": rechecked,
                    "vertices": len(res.framework),
                }
            )
    return rows
