"""Fixed-time minimum-derivative spline: linear-time block elimination.

The QP is solved in endpoint-derivative space.  Segment ``i`` contributes
``f_i^T M_i f_i`` to the cost, where ``M_i`` is the normalized-domain cost
matrix rescaled by the segment's half-duration.  Pins fix some entries of
``f``; the remaining free values ``g`` are coupled only through continuity at
shared knots, which makes the reduced KKT system block tridiagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg
from scipy.linalg import lapack

from .spline_core import (
    InvalidInputError,
    Pin,
    PinExpansion,
    PinSet,
    Spline,
    TimeAllocation,
    as_pins,
    cost_gram,
    derivative_orders,
    endpoint_map_inverse,
    expand_pins,
)


class NumericalFailure(ArithmeticError):
    """The reduced system could not be factorized."""


class InsufficientlyPinnedError(NumericalFailure):
    """The pins leave directions of zero cost, so the optimizer is not unique."""


def cost_exponent(k: int) -> int:
    """Power of delta multiplying the normalized cost of a segment."""
    return 3 - 2 * k


def stated_cost_exponent(k: int) -> int:
    """Power of delta implied by a (2/T)^(2k-1) prefactor; kept for A/B checks only."""
    return 1 - 2 * k


@lru_cache(maxsize=None)
def normalized_cost_matrix(k: int) -> NDArray[np.float64]:
    """K = V^-T H V^-1 on rho in [-1, 1] (f-space cost of a unit half-duration segment)."""
    Vinv = endpoint_map_inverse(k)
    K = Vinv.T @ cost_gram(k) @ Vinv
    K = 0.5 * (K + K.T)
    K.setflags(write=False)
    return K


def segment_cost_matrix(delta: float, k: int, exponent: int | None = None) -> NDArray[np.float64]:
    """f-space cost matrix of one segment with half-duration ``delta``."""
    if not delta > 0:
        raise InvalidInputError(f"half-duration must be positive, got {delta}")
    e = cost_exponent(k) if exponent is None else exponent
    s = float(delta) ** derivative_orders(k)
    return float(delta) ** e * (s[:, None] * normalized_cost_matrix(k) * s[None, :])


def segment_cost_matrices(d: ArrayLike, k: int) -> NDArray[np.float64]:
    """Batched ``segment_cost_matrix`` for every half-duration in ``d``; shape (l, 2k, 2k)."""
    d = np.asarray(d, dtype=np.float64)
    if not np.all(d > 0):
        raise InvalidInputError("half-durations must be positive")
    s = d[:, None] ** derivative_orders(k)[None, :]
    scale = d ** cost_exponent(k)
    return scale[:, None, None] * s[:, :, None] * normalized_cost_matrix(k)[None] * s[:, None, :]


@dataclass(frozen=True)
class FixedTimeProblem:
    k: int
    times: TimeAllocation
    pins: tuple[Pin, ...]

    def __init__(self, k: int, times: TimeAllocation | ArrayLike, pins: PinSet):
        if not isinstance(times, TimeAllocation):
            times = TimeAllocation(np.asarray(times, dtype=np.float64))
        object.__setattr__(self, "k", int(k))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "pins", tuple(as_pins(pins)))
        if self.k < 1:
            raise InvalidInputError("k must be >= 1")
        # validates pins eagerly
        _ = self.expansion

    @property
    def l(self) -> int:
        return self.times.l

    @cached_property
    def expansion(self) -> PinExpansion:
        return expand_pins(self.pins, self.l, self.k)

    @cached_property
    def index_sets(self) -> list[tuple[NDArray[np.int64], NDArray[np.int64]]]:
        ex = self.expansion
        return [(ex.free_minus(i), ex.free_plus(i)) for i in range(self.l)]

    def with_times(self, times: TimeAllocation) -> FixedTimeProblem:
        new = FixedTimeProblem.__new__(FixedTimeProblem)
        object.__setattr__(new, "k", self.k)
        object.__setattr__(new, "times", times)
        object.__setattr__(new, "pins", self.pins)
        if times.l != self.l:
            raise InvalidInputError("new schedule must keep the number of segments")
        # expansion depends only on pins and l, so it can be shared
        new.__dict__["expansion"] = self.expansion
        new.__dict__["index_sets"] = self.index_sets
        return new


@dataclass
class SegmentBlocks:
    """Reduced Hessian blocks of one segment plus forward-elimination state."""

    A: NDArray[np.float64]
    B: NDArray[np.float64]
    C: NDArray[np.float64]
    c_minus: NDArray[np.float64]
    c_plus: NDArray[np.float64]
    Abar: NDArray[np.float64] | None = None
    cbar_minus: NDArray[np.float64] | None = None
    Abar_inv: NDArray[np.float64] | None = field(default=None, repr=False)
    BtAinv: NDArray[np.float64] | None = field(default=None, repr=False)
    schur_inv: NDArray[np.float64] | None = field(default=None, repr=False)


@dataclass
class FixedTimeSolution:
    spline: Spline
    f_star: NDArray[np.float64]
    g_star: list[NDArray[np.float64]]
    lambdas: list[NDArray[np.float64]]
    cost: float


@lru_cache(maxsize=None)
def _upper_indices(n: int) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
    return np.triu_indices(n, 1)


def _spd_inverse(M: NDArray[np.float64], what: str) -> NDArray[np.float64]:
    """Inverse of a symmetric positive-definite block, refusing (near-)singular ones."""
    if M.size == 0:
        return M
    diag = M.diagonal()
    if not (diag > 0).all() or not np.isfinite(M).all():
        raise InsufficientlyPinnedError(f"insufficiently pinned problem: {what} is not positive definite")
    s = 1.0 / np.sqrt(diag)
    # Jacobi scaling makes the pivot threshold below scale-free
    Ms = s[:, None] * M * s[None, :]
    c, info = lapack.dpotrf(Ms, lower=1)
    if info != 0:
        raise InsufficientlyPinnedError(f"insufficiently pinned problem: {what} is not positive definite")
    if c.diagonal().min() ** 2 < 1e-13:
        raise InsufficientlyPinnedError(f"insufficiently pinned problem: {what} is singular")
    inv, info = lapack.dpotri(c, lower=1)
    upper = _upper_indices(inv.shape[0])
    inv[upper] = inv.T[upper]
    return s[:, None] * inv * s[None, :]


def _neg_product(M: NDArray[np.float64], x: NDArray[np.float64]) -> NDArray[np.float64]:
    """-(M @ x) rounded once from extended precision, so every solve path sees the same data."""
    return (-(M.astype(np.longdouble) @ x.astype(np.longdouble))).astype(np.float64)


def assemble_segment_blocks(
    problem: FixedTimeProblem,
    i: int,
    expansion: PinExpansion | None = None,
    M: NDArray[np.float64] | None = None,
) -> SegmentBlocks:
    """Partition Z_i^T M_i Z_i and -Z_i^T M_i fbar_i along the (g-, g+) split."""
    ex = problem.expansion if expansion is None else expansion
    if M is None:
        M = segment_cost_matrix(problem.times.d[i], problem.k)
    if expansion is None:
        im, ip = problem.index_sets[i]
    else:
        im, ip = ex.free_minus(i), ex.free_plus(i)
    rows_m, rows_p = M[im], M[ip]
    fbar = ex.fbar[i]
    return SegmentBlocks(
        A=rows_m[:, im],
        B=rows_m[:, ip],
        C=rows_p[:, ip],
        c_minus=_neg_product(rows_m, fbar),
        c_plus=_neg_product(rows_p, fbar),
    )


def forward_elimination(blocks: Sequence[SegmentBlocks]) -> Sequence[SegmentBlocks]:
    """Fill ``Abar`` and ``cbar_minus`` in place; returns the same sequence."""
    _eliminate_matrices(blocks)
    _sweep_rhs(blocks)
    return blocks


def _eliminate_matrices(blocks: Sequence[SegmentBlocks]) -> None:
    prev = None
    for i, blk in enumerate(blocks):
        if prev is None:
            blk.Abar = blk.A
        else:
            blk.Abar = blk.A + prev.C - prev.BtAinv @ prev.B
        blk.Abar = 0.5 * (blk.Abar + blk.Abar.T)
        blk.Abar_inv = _spd_inverse(blk.Abar, f"eliminated block of segment {i + 1}")
        blk.BtAinv = blk.B.T @ blk.Abar_inv
        prev = blk


def _sweep_rhs(blocks: Sequence[SegmentBlocks]) -> None:
    prev = None
    for blk in blocks:
        if prev is None:
            blk.cbar_minus = blk.c_minus
        else:
            blk.cbar_minus = blk.c_minus + prev.c_plus - prev.BtAinv @ prev.cbar_minus
        prev = blk


def _back_solve(blocks: Sequence[SegmentBlocks]) -> list[NDArray[np.float64]]:
    last = blocks[-1]
    if last.schur_inv is None:
        schur = last.C - last.BtAinv @ last.B
        last.schur_inv = _spd_inverse(0.5 * (schur + schur.T), "terminal Schur complement")
    g_plus = last.schur_inv @ (last.c_plus - last.BtAinv @ last.cbar_minus)
    g: list[NDArray[np.float64]] = [None] * len(blocks)  # type: ignore[list-item]
    for i in range(len(blocks) - 1, -1, -1):
        blk = blocks[i]
        g_minus = blk.Abar_inv @ (blk.cbar_minus - blk.B @ g_plus)
        g[i] = np.concatenate([g_minus, g_plus])
        g_plus = g_minus
    return g


def _multipliers(blocks: Sequence[SegmentBlocks], g: list[NDArray[np.float64]]) -> list[NDArray[np.float64]]:
    out = []
    for blk, gi in zip(blocks[:-1], g[:-1]):
        nm = blk.A.shape[0]
        out.append(blk.B.T @ gi[:nm] + blk.C @ gi[nm:] - blk.c_plus)
    return out


def _refine(blocks: Sequence[SegmentBlocks], g: list[NDArray[np.float64]], steps: int = 2) -> list[NDArray[np.float64]]:
    """Iterative refinement reusing the factorization.

    Residuals are formed in extended precision, which lets the correction
    recover digits lost to the conditioning of the block system.
    """
    saved = [(blk.c_minus, blk.c_plus, blk.cbar_minus) for blk in blocks]
    ext = np.longdouble
    mats = [(blk.A.astype(ext), blk.B.astype(ext), blk.C.astype(ext)) for blk in blocks]
    try:
        for _ in range(steps):
            for blk, gi, (cm, cp, _), (A, B, C) in zip(blocks, g, saved, mats):
                nm = blk.A.shape[0]
                gm, gp = gi[:nm].astype(ext), gi[nm:].astype(ext)
                blk.c_minus = (cm - A @ gm - B @ gp).astype(np.float64)
                blk.c_plus = (cp - B.T @ gm - C @ gp).astype(np.float64)
            _sweep_rhs(blocks)
            g = [gi + di for gi, di in zip(g, _back_solve(blocks))]
    finally:
        for blk, (cm, cp, cb) in zip(blocks, saved):
            blk.c_minus, blk.c_plus, blk.cbar_minus = cm, cp, cb
    return g


def backward_substitution(
    blocks: Sequence[SegmentBlocks],
) -> tuple[list[NDArray[np.float64]], list[NDArray[np.float64]]]:
    """Recover the free values g_i = (g_i^-, g_i^+) and continuity multipliers."""
    g = _refine(blocks, _back_solve(blocks))
    return g, _multipliers(blocks, g)


def _finish(problem: FixedTimeProblem, g: list, lambdas: list) -> FixedTimeSolution:
    ex = problem.expansion
    k = problem.k
    f = np.array(ex.fbar, dtype=np.float64, copy=True)
    for i, gi in enumerate(g):
        f[i, ex.free[i]] = gi
    d = problem.times.d
    s = d[:, None] ** derivative_orders(k)[None, :]
    coeffs = (s * f) @ endpoint_map_inverse(k).T
    spline = Spline(k, problem.times, coeffs)
    cost = float(np.sum(segment_costs(coeffs, d, k)))
    return FixedTimeSolution(spline=spline, f_star=f, g_star=g, lambdas=lambdas, cost=cost)


def segment_costs(coeffs: NDArray[np.float64], d: NDArray[np.float64], k: int) -> NDArray[np.float64]:
    """Per-segment cost from normalized coefficients.

    Only coefficients of degree >= k-1 enter, through the positive-definite
    corner of the Gram matrix, so there is no cancellation against the
    low-degree part the way the f-space quadratic form has.
    """
    hi = coeffs[:, k - 1 :]
    Hhi = cost_gram(k)[k - 1 :, k - 1 :]
    return d ** cost_exponent(k) * np.einsum("ij,jk,ik->i", hi, Hhi, hi)


def solve_fixed_time(problem: FixedTimeProblem) -> FixedTimeSolution:
    """Solve the fixed-time problem in O(k^3 l)."""
    M = segment_cost_matrices(problem.times.d, problem.k)
    blocks = [assemble_segment_blocks(problem, i, M=M[i]) for i in range(problem.l)]
    forward_elimination(blocks)
    g, lambdas = backward_substitution(blocks)
    return _finish(problem, g, lambdas)


def same_structure(a: FixedTimeProblem, b: FixedTimeProblem) -> bool:
    """True when two problems differ only in pin values."""
    return (
        a.k == b.k
        and np.array_equal(a.times.t, b.times.t)
        and np.array_equal(a.expansion.free, b.expansion.free)
    )


def solve_fixed_time_many(problems: Sequence[FixedTimeProblem]) -> list[FixedTimeSolution]:
    """Solve problems that share k, times and pin positions with one elimination.

    The block matrices depend only on the shared structure, so they are
    factored once. Right-hand sides are swept one at a time with the same
    matrix-vector products as a single solve, which keeps every result
    bit-identical to ``solve_fixed_time``.
    """
    first = problems[0]
    if not all(same_structure(first, p) for p in problems[1:]):
        raise InvalidInputError("problems must share k, times and pin positions")
    M = segment_cost_matrices(first.times.d, first.k)
    blocks = [assemble_segment_blocks(first, i, M=M[i]) for i in range(first.l)]
    _eliminate_matrices(blocks)
    out = []
    for p in problems:
        for i, (blk, (im, ip)) in enumerate(zip(blocks, first.index_sets)):
            fbar = p.expansion.fbar[i]
            blk.c_minus = _neg_product(M[i][im], fbar)
            blk.c_plus = _neg_product(M[i][ip], fbar)
        _sweep_rhs(blocks)
        g, lambdas = backward_substitution(blocks)
        out.append(_finish(p, g, lambdas))
    return out


def reduced_kkt(problem: FixedTimeProblem) -> tuple[NDArray, NDArray, list[int]]:
    """Dense reduced KKT matrix and right-hand side over (g, lambda).

    Returns the matrix, the right-hand side and the offsets of each segment's
    free block inside ``g``.
    """
    ex = problem.expansion
    M = segment_cost_matrices(problem.times.d, problem.k)
    sizes = [int(ex.free[i].sum()) for i in range(problem.l)]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int).tolist()
    ng = offsets[-1]
    Q = np.zeros((ng, ng))
    c = np.zeros(ng)
    for i in range(problem.l):
        Z = ex.selector(i)
        sl = slice(offsets[i], offsets[i + 1])
        Q[sl, sl] = Z.T @ M[i] @ Z
        c[sl] = _neg_product(Z.T @ M[i], ex.fbar[i])
    rows = []
    for i in range(problem.l - 1):
        n_minus_next = int(ex.free[i + 1, : problem.k].sum())
        n_minus_here = int(ex.free[i, : problem.k].sum())
        n_plus = sizes[i] - n_minus_here
        for j in range(n_plus):
            row = np.zeros(ng)
            row[offsets[i] + n_minus_here + j] = -1.0
            row[offsets[i + 1] + j] = 1.0
            rows.append(row)
        assert n_minus_next == n_plus
    Ec = np.array(rows).reshape(len(rows), ng)
    nl = Ec.shape[0]
    K = np.block([[Q, Ec.T], [Ec, np.zeros((nl, nl))]])
    rhs = np.concatenate([c, np.zeros(nl)])
    return K, rhs, offsets


def solve_dense_oracle(problem: FixedTimeProblem) -> FixedTimeSolution:
    """Reference solve of the same QP by one dense factorization of the reduced KKT system."""
    if problem.l * problem.k > 2000:
        raise InvalidInputError("dense oracle limited to l*k <= 2000")
    K, rhs, offsets = reduced_kkt(problem)
    ng = offsets[-1]
    sol = np.zeros(0)
    if K.size:
        # symmetric equilibration; a singular system then shows up as cond ~ 1/eps
        s = 1.0 / np.sqrt(np.abs(K).max(axis=1))
        Ks = s[:, None] * K * s[None, :]
        if not np.all(np.isfinite(Ks)) or np.linalg.cond(Ks) > 1e13:
            raise NumericalFailure("reduced KKT matrix is singular")
        lu = linalg.lu_factor(Ks, check_finite=False)
        x = s * linalg.lu_solve(lu, s * rhs)
        # refinement with residuals in extended precision
        Ke = K.astype(np.longdouble)
        for _ in range(2):
            r = (rhs - Ke @ x.astype(np.longdouble)).astype(np.float64)
            x = x + s * linalg.lu_solve(lu, s * r)
        sol = x
    g_all, lam_all = sol[:ng], sol[ng:]
    g = [g_all[offsets[i] : offsets[i + 1]] for i in range(problem.l)]
    lambdas = []
    pos = 0
    ex = problem.expansion
    for i in range(problem.l - 1):
        m = int(ex.free[i, problem.k :].sum())
        lambdas.append(lam_all[pos : pos + m])
        pos += m
    return _finish(problem, g, lambdas)


def fixed_time_cost(problem: FixedTimeProblem) -> float:
    return solve_fixed_time(problem).cost
