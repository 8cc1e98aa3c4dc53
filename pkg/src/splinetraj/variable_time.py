"""Time allocation: optimize half-durations with exact gradients.

The optimal fixed-time cost J depends on the knot schedule only through the
half-durations d.  Because the feasible set of the fixed-time QP (in
endpoint-derivative space) does not depend on d, the envelope theorem gives
dJ/d(delta_i) as the partial derivative of segment i's quadratic form at the
optimizer.  That costs O(l k^2) on top of a single fixed-time solve.

J alone is unbounded below as durations grow, so the optimizer works either on
a fixed total duration (simplex projection) or with a linear time penalty.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .fixed_time import (
    FixedTimeProblem,
    FixedTimeSolution,
    NumericalFailure,
    cost_exponent,
    solve_fixed_time,
)
from .spline_core import (
    InvalidInputError,
    TimeAllocation,
    cost_gram,
    derivative_orders,
    endpoint_map_inverse,
)

log = logging.getLogger(__name__)

Mode = Literal["fixed-total", "time-penalty"]
Method = Literal["exact", "findiff", "random"]
Metric = Literal["euclidean", "duration"]
METHODS = ("exact", "findiff", "random")


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for the duration optimizer.

    ``total_time`` of ``None`` in fixed-total mode keeps the initial total.
    ``tol`` of ``None`` means ``1e-8 * (1 + sum(d))``.  ``target_value`` adds an
    extra stopping rule (objective at or below the target) and ``max_evals``
    caps the number of J evaluations; together they give all methods the same
    termination in comparisons. ``metric="duration"`` scales the gradient step
    and the projection by diag(d^2), which makes steps act on relative
    changes of the durations.
    """

    mode: Mode = "fixed-total"
    total_time: float | None = None
    kappa: float = 0.0
    d_min: float = 1e-6
    armijo_c: float = 1e-4
    shrink: float = 0.5
    alpha_init: float | None = None
    max_iters: int = 500
    tol: float | None = None
    seed: int = 0
    fd_rel_step: float = 1e-6
    random_step: float | None = None
    random_smoothing: float = 1e-6
    target_value: float | None = None
    metric: Metric = "euclidean"
    max_evals: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("fixed-total", "time-penalty"):
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if self.metric not in ("euclidean", "duration"):
            raise InvalidInputError(f"unknown metric {self.metric!r}")
        if not self.d_min > 0:
            raise InvalidInputError("d_min must be positive")
        if not 0 < self.armijo_c < 1 or not 0 < self.shrink < 1:
            raise InvalidInputError("armijo_c and shrink must lie in (0, 1)")
        if self.kappa < 0:
            raise InvalidInputError("kappa must be non-negative")
        if self.alpha_init is not None and not self.alpha_init > 0:
            raise InvalidInputError("alpha_init must be positive")
        if self.max_iters < 0:
            raise InvalidInputError("max_iters must be non-negative")
        if self.max_evals is not None and self.max_evals < 1:
            raise InvalidInputError("max_evals must be positive")

    def resolved(self, d0: NDArray[np.float64]) -> OptimizerConfig:
        """Copy with ``total_time`` filled from ``d0`` and feasibility checked."""
        cfg = self
        if cfg.mode == "fixed-total" and cfg.total_time is None:
            cfg = dataclasses.replace(cfg, total_time=2.0 * float(np.sum(d0)))
        if cfg.mode == "fixed-total" and not cfg.total_time > 2 * len(d0) * cfg.d_min:
            raise InvalidInputError(
                f"total_time {cfg.total_time} too small for {len(d0)} segments with d_min {cfg.d_min}"
            )
        return cfg


@dataclass
class TraceEntry:
    d: NDArray[np.float64]
    J: float
    objective: float
    step: float
    evals: int


@dataclass
class OptimizerTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    converged: bool = False
    stagnated: bool = False
    reached_target: bool = False

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def evals(self) -> int:
        return self.entries[-1].evals if self.entries else 0

    @property
    def objective(self) -> NDArray[np.float64]:
        return np.array([e.objective for e in self.entries])


# ---------------------------------------------------------------------------
# Change of variables and projection
# ---------------------------------------------------------------------------


def durations_to_times(d: ArrayLike, tau0: float = 0.0) -> TimeAllocation:
    return TimeAllocation.from_durations(d, tau0)


def times_to_durations(times: TimeAllocation | ArrayLike) -> NDArray[np.float64]:
    if isinstance(times, TimeAllocation):
        return times.d
    return 0.5 * np.diff(np.asarray(times, dtype=np.float64))


def project_simplex(x: NDArray[np.float64], total: float, lower: float = 0.0) -> NDArray[np.float64]:
    """Euclidean projection onto {y >= lower, sum(y) = total} by sorted thresholding."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    r = total - n * lower
    if r < 0:
        raise InvalidInputError(f"simplex infeasible: total {total} < {n} * {lower}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("cannot project a non-finite vector")
    # a uniform shift leaves the projection unchanged; anchoring at the max keeps
    # the first threshold test exact for huge inputs
    y = x - np.max(x)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - r
    ind = np.arange(1, n + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    theta = css[rho] / (rho + 1)
    out = np.maximum(y - theta, 0.0) + lower
    # put the rounding residue on the largest component so the sum is kept
    j = int(np.argmax(out))
    out[j] += total - out.sum()
    return out


def project_weighted_simplex(
    x: NDArray[np.float64], total: float, lower: float, weights: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Projection onto {y >= lower, sum(y) = total} in the norm sum((x - y)^2 / w).

    The solution is y_i = max(lower, x_i - theta w_i); theta is found exactly by
    scanning the sorted breakpoints.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n = x.size
    if total - n * lower < 0:
        raise InvalidInputError(f"simplex infeasible: total {total} < {n} * {lower}")
    if not np.all(np.isfinite(x)) or not np.all(w > 0):
        raise InvalidInputError("cannot project a non-finite vector")
    brk = (x - lower) / w
    order = np.argsort(-brk)
    xs, ws, bs = x[order], w[order], brk[order]
    m = np.arange(1, n + 1)
    theta = (np.cumsum(xs) - (total - (n - m) * lower)) / np.cumsum(ws)
    nxt = np.append(bs[1:], -np.inf)
    ok = np.flatnonzero((theta >= nxt) & (theta < bs) | (m == n))
    th = theta[ok[0]]
    out = np.maximum(x - th * w, lower)
    j = int(np.argmax(out))
    out[j] += total - out.sum()
    return out


def project_feasible(
    d: ArrayLike, config: OptimizerConfig, weights: NDArray[np.float64] | None = None
) -> NDArray[np.float64]:
    """Projection onto the feasible durations, optionally in a diagonal metric."""
    d = np.asarray(d, dtype=np.float64)
    if config.mode == "time-penalty":
        return np.maximum(d, config.d_min)
    if config.total_time is None:
        raise InvalidInputError("fixed-total projection needs total_time")
    if weights is None:
        return project_simplex(d, 0.5 * config.total_time, config.d_min)
    return project_weighted_simplex(d, 0.5 * config.total_time, config.d_min, weights)


# ---------------------------------------------------------------------------
# Gradient
# ---------------------------------------------------------------------------


def grad_J(problem: FixedTimeProblem | int, d: ArrayLike, f_star: NDArray[np.float64]) -> NDArray[np.float64]:
    """Analytic dJ/d(delta_i) at the fixed-time optimizer ``f_star``.

    With u = S(delta) f the segment cost is delta^e u^T K u and dS/d(delta) =
    S D / delta, so the partial derivative is (e J_i + 2 delta^e (D u)^T K u) / delta.
    Both quadratic forms are evaluated on normalized coefficients (degree >= k-1
    only) to avoid cancellation.  ``problem`` may be the problem or just its ``k``.
    """
    k = problem if isinstance(problem, int) else problem.k
    d = np.asarray(d, dtype=np.float64)
    if not np.all(d > 0):
        raise InvalidInputError("half-durations must be positive")
    orders = derivative_orders(k)
    u = d[:, None] ** orders[None, :] * f_star
    Vinv_hi = endpoint_map_inverse(k)[k - 1 :]
    Hhi = cost_gram(k)[k - 1 :, k - 1 :]
    a = u @ Vinv_hi.T
    b = (u * orders[None, :]) @ Vinv_hi.T
    scale = d ** cost_exponent(k)
    quad = scale * np.einsum("ij,jk,ik->i", a, Hhi, a)
    cross = scale * np.einsum("ij,jk,ik->i", b, Hhi, a)
    return (cost_exponent(k) * quad + 2.0 * cross) / d


# ---------------------------------------------------------------------------
# Optimizer core
# ---------------------------------------------------------------------------

# evaluate(d) -> (J, dJ/dd); one call is one J evaluation
Evaluator = Callable[[NDArray[np.float64]], "tuple[float, NDArray[np.float64]]"]


def single_problem_evaluator(problem: FixedTimeProblem) -> Evaluator:
    tau0 = float(problem.times.t[0])

    def evaluate(d: NDArray[np.float64]) -> tuple[float, NDArray[np.float64]]:
        sol = solve_fixed_time(problem.with_times(durations_to_times(d, tau0)))
        return sol.cost, grad_J(problem.k, d, sol.f_star)

    return evaluate


class _Objective:
    """Counts evaluations and adds the mode term."""

    def __init__(self, evaluate: Evaluator, config: OptimizerConfig):
        self.evaluate = evaluate
        self.config = config
        self.count = 0

    def __call__(self, d: NDArray[np.float64]) -> tuple[float, float, NDArray[np.float64]]:
        self.count += 1
        try:
            J, g = self.evaluate(d)
        except NumericalFailure:
            # extreme duration ratios; the caller sees an unacceptable point
            return np.inf, np.inf, np.full_like(d, np.nan)
        if self.config.mode == "time-penalty":
            kappa = self.config.kappa
            return J, J + 2.0 * kappa * float(np.sum(d)), g + 2.0 * kappa
        return J, J, g


@dataclass
class _State:
    d: NDArray[np.float64]
    J: float
    F: float
    grad: NDArray[np.float64]
    iteration: int = 0
    # previous point and its search direction, for Barzilai-Borwein steps
    prev_d: NDArray[np.float64] | None = None
    prev_dir: NDArray[np.float64] | None = None
    prev_alpha: float | None = None


def _tol(config: OptimizerConfig, d: NDArray[np.float64]) -> float:
    return config.tol if config.tol is not None else 1e-8 * (1.0 + float(np.sum(d)))


def _effective(g: NDArray[np.float64], config: OptimizerConfig) -> NDArray[np.float64]:
    # in fixed-total mode a uniform gradient component cannot move the iterate
    return g - g.mean() if config.mode == "fixed-total" else g


def _weights(state: _State, config: OptimizerConfig) -> NDArray[np.float64] | None:
    return state.d**2 if config.metric == "duration" else None


def _initial_alpha(
    state: _State, direction: NDArray[np.float64], config: OptimizerConfig, w: NDArray[np.float64] | None
) -> float | None:
    winv = 1.0 if w is None else 1.0 / w
    if state.prev_d is not None:
        s = state.d - state.prev_d
        y = direction - state.prev_dir
        sy = float(s @ y)
        alpha = float(s @ (winv * s)) / sy if sy > 0 else 2.0 * state.prev_alpha
        return float(np.clip(alpha, 1e-12, 1e6))
    if config.alpha_init is not None:
        return config.alpha_init
    scaled = direction if w is None else w * direction
    scale = float(np.max(np.abs(_effective(scaled, config)) / state.d))
    if scale == 0:
        return None
    return 0.1 / scale


def _descent_step(
    state: _State, direction: NDArray[np.float64], obj: _Objective, config: OptimizerConfig
) -> tuple[str, _State]:
    """Projected Armijo backtracking along -direction.

    Status is 'accepted', 'converged' (the trial displacement fell below tol)
    or 'stagnated' (no acceptable step after 60 halvings).
    """
    tol = _tol(config, state.d)
    w = _weights(state, config)
    alpha = _initial_alpha(state, direction, config, w)
    if alpha is None:
        return "converged", state
    scaled = direction if w is None else w * direction
    for _ in range(61):
        trial = project_feasible(state.d - alpha * scaled, config, w)
        step = trial - state.d
        if np.max(np.abs(step)) <= tol:
            return "converged", state
        J, F, g = obj(trial)
        if F <= state.F + config.armijo_c * float(direction @ step):
            return "accepted", _State(trial, J, F, g, state.iteration + 1, state.d, direction, alpha)
        alpha *= config.shrink
    return "stagnated", state


def step_exact(state: _State, obj: _Objective, config: OptimizerConfig) -> tuple[str, _State]:
    return _descent_step(state, state.grad, obj, config)


def finite_difference_gradient(state: _State, obj: _Objective, config: OptimizerConfig) -> NDArray[np.float64]:
    """Forward differences, one extra evaluation per coordinate."""
    est = np.empty_like(state.d)
    for j in range(state.d.size):
        gamma = config.fd_rel_step * max(state.d[j], 1.0)
        dp = state.d.copy()
        dp[j] += gamma
        _, F, _ = obj(dp)
        est[j] = (F - state.F) / gamma
    return est


def step_finite_difference(state: _State, obj: _Objective, config: OptimizerConfig) -> tuple[str, _State]:
    return _descent_step(state, finite_difference_gradient(state, obj, config), obj, config)


def step_random(
    state: _State,
    obj: _Objective,
    config: OptimizerConfig,
    rng: np.random.Generator,
    step0: float,
    direction: NDArray[np.float64] | None = None,
) -> tuple[str, _State]:
    """One Gaussian directional-difference step; two evaluations, no line search."""
    r = rng.standard_normal(state.d.size) if direction is None else np.asarray(direction, dtype=np.float64)
    if not np.any(r):
        return "accepted", dataclasses.replace(state, iteration=state.iteration + 1)
    zeta = config.random_smoothing * float(np.mean(state.d))
    probe = np.maximum(state.d + zeta * r, config.d_min)
    _, Fp, _ = obj(probe)
    slope = (Fp - state.F) / zeta
    eps = step0 / np.sqrt(state.iteration + 1)
    step = -eps * slope * r
    if not np.all(np.isfinite(step)):
        step = np.zeros_like(step)
    # no component may shrink or grow by more than half in one step
    ratio = float(np.max(np.abs(step) / state.d))
    if ratio > 0.5:
        step *= 0.5 / ratio
    trial = project_feasible(state.d + step, config)
    J, F, g = obj(trial)
    if not np.isfinite(F):
        return "accepted", dataclasses.replace(state, iteration=state.iteration + 1)
    return "accepted", _State(trial, J, F, g, state.iteration + 1)


def default_random_step(state: _State) -> float:
    """Step scale for the random method from a curvature guess at the start point.

    Uses L ~ F / mean(d)^2 per coordinate and the 1 / (4 (n + 4) L) rule.
    """
    n = state.d.size
    L = max(state.F, 1e-300) / (n * float(np.mean(state.d)) ** 2)
    return 1.0 / (4.0 * (n + 4) * L)


def initial_state(evaluate: Evaluator, d0: ArrayLike, config: OptimizerConfig) -> tuple[_State, _Objective, OptimizerConfig]:
    d0 = np.asarray(d0, dtype=np.float64)
    config = config.resolved(d0)
    obj = _Objective(evaluate, config)
    d = project_feasible(d0, config)
    J, F, g = obj(d)
    return _State(d, J, F, g), obj, config


def minimize_durations(
    evaluate: Evaluator,
    d0: ArrayLike,
    config: OptimizerConfig,
    method: Method = "exact",
) -> tuple[NDArray[np.float64], OptimizerTrace]:
    """Projected descent over half-durations; returns the final d and the trace."""
    if method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}")
    state, obj, config = initial_state(evaluate, d0, config)
    trace = OptimizerTrace()
    rng = np.random.default_rng(config.seed)
    step0 = config.random_step if config.random_step is not None else default_random_step(state)
    target = config.target_value
    if target is not None and state.F <= target:
        trace.reached_target = True
        trace.entries.append(TraceEntry(state.d.copy(), state.J, state.F, 0.0, obj.count))
        return state.d, trace
    tol = _tol(config, state.d)
    for _ in range(config.max_iters):
        old = state
        if method == "exact":
            status, state = step_exact(state, obj, config)
        elif method == "findiff":
            status, state = step_finite_difference(state, obj, config)
        else:
            status, state = step_random(state, obj, config, rng, step0)
        moved = float(np.max(np.abs(state.d - old.d)))
        trace.entries.append(TraceEntry(state.d.copy(), state.J, state.F, moved, obj.count))
        if status == "converged":
            trace.converged = True
            break
        if status == "stagnated":
            trace.stagnated = True
            log.debug("line search stagnated at iteration %d", len(trace))
            break
        if target is not None and state.F <= target:
            trace.reached_target = True
            break
        if method != "random" and moved < tol:
            trace.converged = True
            break
        if config.max_evals is not None and obj.count >= config.max_evals:
            break
    return state.d, trace


def solve_variable_time(
    problem: FixedTimeProblem,
    config: OptimizerConfig | None = None,
    method: Method = "exact",
) -> tuple[FixedTimeSolution, NDArray[np.float64], OptimizerTrace]:
    """Optimize the schedule of ``problem`` starting from its current times."""
    config = OptimizerConfig() if config is None else config
    tau0 = float(problem.times.t[0])
    d_star, trace = minimize_durations(single_problem_evaluator(problem), problem.times.d, config, method)
    sol = solve_fixed_time(problem.with_times(durations_to_times(d_star, tau0)))
    return sol, d_star, trace
