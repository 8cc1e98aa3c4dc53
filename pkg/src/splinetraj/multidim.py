"""Several splines sharing one knot schedule, optimized jointly over the times."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .fixed_time import FixedTimeProblem, FixedTimeSolution, same_structure, solve_fixed_time_many
from .spline_core import InvalidInputError, PinSet, Spline, TimeAllocation, as_pins
from .variable_time import (
    Method,
    OptimizerConfig,
    OptimizerTrace,
    durations_to_times,
    grad_J,
    minimize_durations,
)


@dataclass(frozen=True)
class Dimension:
    name: str
    k: int
    pins: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "pins", tuple(as_pins(self.pins)))


@dataclass(frozen=True)
class MultiDimProblem:
    """Ordered dimensions over a common knot schedule.

    ``times`` is the initial (or fixed) schedule; every dimension is a
    well-posed fixed-time problem on it.
    """

    dims: tuple[Dimension, ...]
    times: TimeAllocation
    config: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self) -> None:
        dims = tuple(d if isinstance(d, Dimension) else Dimension(*d) for d in self.dims)
        if not dims:
            raise InvalidInputError("need at least one dimension")
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise InvalidInputError(f"duplicate dimension names in {names}")
        times = self.times if isinstance(self.times, TimeAllocation) else TimeAllocation(self.times)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "times", times)
        # validates every pin set against the shared l
        object.__setattr__(self, "_problems", tuple(FixedTimeProblem(d.k, times, d.pins) for d in dims))

    @classmethod
    def from_durations(
        cls,
        dims: Sequence[Dimension | tuple[str, int, PinSet]],
        d0: ArrayLike,
        config: OptimizerConfig | None = None,
        tau0: float = 0.0,
    ) -> MultiDimProblem:
        return cls(tuple(dims), durations_to_times(d0, tau0), config or OptimizerConfig())

    @property
    def l(self) -> int:
        return self.times.l

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def problems_at(self, times: TimeAllocation) -> list[FixedTimeProblem]:
        return [p.with_times(times) for p in self._problems]


@dataclass(frozen=True)
class FlatTrajectory:
    """One spline per named dimension, all on the same knot vector."""

    names: tuple[str, ...]
    splines: tuple[Spline, ...]
    cost: float = 0.0

    def __post_init__(self) -> None:
        t0 = self.splines[0].times.t
        for s in self.splines[1:]:
            if not np.array_equal(s.times.t, t0):
                raise InvalidInputError("component splines disagree on knot times")

    @property
    def times(self) -> TimeAllocation:
        return self.splines[0].times

    def __getitem__(self, name: str) -> Spline:
        return self.splines[self.names.index(name)]


def _tagged(name: str, exc: Exception) -> Exception:
    tagged = type(exc)(f"dimension {name!r}: {exc}")
    tagged.__cause__ = exc
    return tagged


def _solve_all(problem: MultiDimProblem, times: TimeAllocation) -> list[FixedTimeSolution]:
    subs = problem.problems_at(times)
    out: list[FixedTimeSolution | None] = [None] * len(subs)
    # dimensions with identical pin positions share one elimination
    groups: list[list[int]] = []
    for j, sub in enumerate(subs):
        for grp in groups:
            if same_structure(subs[grp[0]], sub):
                grp.append(j)
                break
        else:
            groups.append([j])
    for grp in groups:
        try:
            sols = solve_fixed_time_many([subs[j] for j in grp])
        except (ArithmeticError, ValueError) as exc:
            raise _tagged(problem.dims[grp[0]].name, exc) from exc
        for j, sol in zip(grp, sols):
            out[j] = sol
    return out  # type: ignore[return-value]


def multidim_cost_and_grad(problem: MultiDimProblem, d: ArrayLike) -> tuple[float, NDArray[np.float64]]:
    """Summed cost and gradient over all dimensions at half-durations ``d``."""
    d = np.asarray(d, dtype=np.float64)
    times = durations_to_times(d, float(problem.times.t[0]))
    J = 0.0
    g = np.zeros_like(d)
    for dim, sol in zip(problem.dims, _solve_all(problem, times)):
        J += sol.cost
        g += grad_J(dim.k, d, sol.f_star)
    return J, g


def solve_multidim(
    problem: MultiDimProblem, method: Method = "exact"
) -> tuple[FlatTrajectory, NDArray[np.float64], OptimizerTrace]:
    """Joint schedule optimization, then one fixed-time solve per dimension at the result."""
    d_star, trace = minimize_durations(
        lambda d: multidim_cost_and_grad(problem, d), problem.times.d, problem.config, method
    )
    times = durations_to_times(d_star, float(problem.times.t[0]))
    sols = _solve_all(problem, times)
    traj = FlatTrajectory(
        tuple(problem.names), tuple(s.spline for s in sols), float(sum(s.cost for s in sols))
    )
    return traj, d_star, trace


def sample_flat_outputs(traj: FlatTrajectory, rate: float, max_deriv: int) -> tuple[list[str], NDArray[np.float64]]:
    """Uniformly sampled table with columns t, then <name>_d0..<name>_d<max_deriv> per dimension.

    Derivatives beyond a segment's polynomial degree come out as zero.
    """
    if not rate > 0:
        raise InvalidInputError(f"rate must be positive, got {rate}")
    if max_deriv < 0:
        raise InvalidInputError("max_deriv must be non-negative")
    t = traj.times.t
    count = int(np.floor((t[-1] - t[0]) * rate + 1e-9)) + 1
    tau = np.linspace(t[0], t[-1], count) if count > 1 else t[:1].copy()
    header = ["t"]
    cols = [tau]
    for name, s in zip(traj.names, traj.splines):
        for q in range(max_deriv + 1):
            header.append(f"{name}_d{q}")
            cols.append(s.eval(tau, q))
    return header, np.column_stack(cols)
