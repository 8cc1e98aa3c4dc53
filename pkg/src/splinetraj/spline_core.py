"""Monomial basis machinery and normalized-domain spline segments.

Every segment is stored on the local coordinate rho in [-1, 1]; absolute time
maps to rho through the segment midpoint and half-duration ``delta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray


class InvalidInputError(ValueError):
    """Raised when a problem, pin set or query is malformed."""


class OutOfDomainError(InvalidInputError):
    """Raised when a spline is evaluated outside its knot span."""


# ---------------------------------------------------------------------------
# Time allocation and pins
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeAllocation:
    """Knot times ``t`` with half-durations ``d[i] = (t[i+1] - t[i]) / 2``.

    ``d`` and ``t[0]`` are canonical and ``t`` is rebuilt from them, so a
    shifted schedule carries bit-identical half-durations.  Built from
    ``t`` directly, ``d`` is derived first and ``t`` recomputed from it.
    """

    t: NDArray[np.float64]

    def __post_init__(self) -> None:
        t = np.array(self.t, dtype=np.float64).ravel()
        if t.size < 2:
            raise InvalidInputError("need at least two knot times")
        if not np.all(np.isfinite(t)):
            raise InvalidInputError("knot times must be finite")
        if not np.all(np.diff(t) > 0):
            raise InvalidInputError("knot times must be strictly increasing")
        self._set(float(t[0]), 0.5 * np.diff(t))

    def _set(self, tau0: float, d: NDArray[np.float64]) -> None:
        t = np.empty(d.size + 1)
        t[0] = tau0
        t[1:] = tau0 + 2.0 * np.cumsum(d)
        t.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "_d", d)

    @classmethod
    def from_durations(cls, d: ArrayLike, tau0: float = 0.0) -> TimeAllocation:
        d = np.array(d, dtype=np.float64).ravel()
        if d.size == 0 or not np.all(d > 0) or not np.all(np.isfinite(d)):
            raise InvalidInputError("half-durations must be positive")
        if not np.isfinite(tau0):
            raise InvalidInputError("start time must be finite")
        new = cls.__new__(cls)
        new._set(float(tau0), d)
        if not np.all(np.diff(new.t) > 0):
            raise InvalidInputError("half-durations vanish next to the start time")
        return new

    @property
    def d(self) -> NDArray[np.float64]:
        return self._d

    @property
    def l(self) -> int:
        return self.t.size - 1

    @property
    def midpoints(self) -> NDArray[np.float64]:
        return self.t[:-1] + self._d

    def shifted(self, alpha: float) -> TimeAllocation:
        return TimeAllocation.from_durations(self._d, self.t[0] + alpha)


class Pin(NamedTuple):
    """Prescribed value of derivative ``deriv`` at knot ``knot``."""

    knot: int
    deriv: int
    value: float


PinSet = Sequence[Pin]


def as_pins(items: Iterable) -> list[Pin]:
    """Coerce tuples or mappings with knot/deriv/value into ``Pin`` objects."""
    out = []
    for item in items:
        if isinstance(item, Pin):
            out.append(item)
        elif isinstance(item, dict):
            out.append(Pin(int(item["knot"]), int(item["deriv"]), float(item["value"])))
        else:
            knot, deriv, value = item
            out.append(Pin(int(knot), int(deriv), float(value)))
    return out


@dataclass(frozen=True)
class PinExpansion:
    """Per-segment view of a pin set.

    Attributes:
        fbar: (l, 2k) pinned values, zero at free positions.
        free: (l, 2k) boolean mask of free positions. ``Z_i`` is the identity
            restricted to the columns where ``free[i]`` is true.
        mu_minus, mu_plus: number of pinned positions at the start/end of each
            segment.
    """

    k: int
    fbar: NDArray[np.float64]
    free: NDArray[np.bool_]
    mu_minus: NDArray[np.int64]
    mu_plus: NDArray[np.int64]

    @property
    def l(self) -> int:
        return self.fbar.shape[0]

    def free_minus(self, i: int) -> NDArray[np.int64]:
        return np.flatnonzero(self.free[i, : self.k])

    def free_plus(self, i: int) -> NDArray[np.int64]:
        return self.k + np.flatnonzero(self.free[i, self.k :])

    def free_index(self, i: int) -> NDArray[np.int64]:
        return np.flatnonzero(self.free[i])

    def selector(self, i: int) -> NDArray[np.float64]:
        """Dense ``Z_i`` (2k x number of free positions)."""
        return np.eye(2 * self.k)[:, self.free[i]]

    def row_selector(self, i: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Dense ``P_i`` and ``b_i`` for segment ``i``."""
        pinned = np.flatnonzero(~self.free[i])
        P = np.eye(2 * self.k)[pinned]
        return P, self.fbar[i, pinned]


def expand_pins(pins: PinSet, l: int, k: int) -> PinExpansion:
    """Place knot-level pins onto the segment endpoint stacks.

    Interior-knot pins land on both adjacent segments with the same value so
    that continuity and pinning can never disagree.
    """
    if l < 1 or k < 1:
        raise InvalidInputError(f"need l >= 1 and k >= 1, got l={l}, k={k}")
    fbar = np.zeros((l, 2 * k))
    free = np.ones((l, 2 * k), dtype=bool)
    seen: set[tuple[int, int]] = set()
    for pin in pins:
        knot, deriv, value = int(pin[0]), int(pin[1]), float(pin[2])
        if not 0 <= knot <= l:
            raise InvalidInputError(f"pin knot {knot} outside 0..{l}")
        if not 0 <= deriv < k:
            raise InvalidInputError(f"pin derivative {deriv} outside 0..{k - 1}")
        if not np.isfinite(value):
            raise InvalidInputError(f"pin value at ({knot}, {deriv}) is not finite")
        if (knot, deriv) in seen:
            raise InvalidInputError(f"duplicate pin at knot {knot}, derivative {deriv}")
        seen.add((knot, deriv))
        if knot > 0:
            fbar[knot - 1, k + deriv] = value
            free[knot - 1, k + deriv] = False
        if knot < l:
            fbar[knot, deriv] = value
            free[knot, deriv] = False
    mu_minus = k - free[:, :k].sum(axis=1)
    mu_plus = k - free[:, k:].sum(axis=1)
    fbar.setflags(write=False)
    free.setflags(write=False)
    return PinExpansion(k, fbar, free, mu_minus.astype(np.int64), mu_plus.astype(np.int64))


# ---------------------------------------------------------------------------
# Basis matrices
# ---------------------------------------------------------------------------


def _falling(j: int, q: int) -> int:
    # j (j-1) ... (j-q+1), zero when q > j
    return factorial(j) // factorial(j - q) if q <= j else 0


def monomial_derivatives(rho: float, q: int, n: int) -> NDArray[np.float64]:
    """q-th derivative of (1, rho, ..., rho^(n-1)) at ``rho``."""
    out = np.zeros(n)
    for j in range(q, n):
        out[j] = _falling(j, q) * rho ** (j - q)
    return out


def basis_derivative_matrix(rho: float, k: int) -> NDArray[np.float64]:
    """W(rho): row q holds the q-th derivative of the 2k monomials."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    return np.vstack([monomial_derivatives(rho, q, 2 * k) for q in range(k)])


def _readonly(a: NDArray) -> NDArray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def endpoint_map(k: int) -> NDArray[np.float64]:
    """Stack of W(-1) over W(+1); maps normalized coefficients to endpoint derivatives."""
    return _readonly(np.vstack([basis_derivative_matrix(-1.0, k), basis_derivative_matrix(1.0, k)]))


@lru_cache(maxsize=None)
def endpoint_map_inverse(k: int) -> NDArray[np.float64]:
    return _readonly(np.linalg.inv(endpoint_map(k)))


@lru_cache(maxsize=None)
def cost_gram(k: int) -> NDArray[np.float64]:
    """Gram matrix of the (k-1)-th derivatives of the monomials on [-1, 1]."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    n, q = 2 * k, k - 1
    H = np.zeros((n, n))
    for a in range(q, n):
        for b in range(q, n):
            p = a + b - 2 * q
            if p % 2 == 0:
                H[a, b] = _falling(a, q) * _falling(b, q) * 2.0 / (p + 1)
    return _readonly(H)


@lru_cache(maxsize=None)
def derivative_orders(k: int) -> NDArray[np.float64]:
    """diag{0, 1, ..., k-1, 0, 1, ..., k-1} as a vector."""
    return _readonly(np.tile(np.arange(k, dtype=np.float64), 2))


def scaling_block(delta: float, k: int) -> NDArray[np.float64]:
    """G(delta) = diag{delta^-q} over both endpoint stacks."""
    if not delta > 0:
        raise InvalidInputError(f"half-duration must be positive, got {delta}")
    return np.diag(float(delta) ** -derivative_orders(k))


# ---------------------------------------------------------------------------
# Splines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Spline:
    """Piecewise polynomial with per-segment coefficients on rho in [-1, 1].

    ``coeffs[i]`` are the monomial coefficients of segment ``i`` in the local
    variable ``rho = (tau - midpoint_i) / delta_i``.
    """

    k: int
    times: TimeAllocation
    coeffs: NDArray[np.float64]

    def __post_init__(self) -> None:
        coeffs = np.array(self.coeffs, dtype=np.float64)
        if coeffs.shape != (self.times.l, 2 * self.k):
            raise InvalidInputError(
                f"coeffs shape {coeffs.shape} != ({self.times.l}, {2 * self.k})"
            )
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def l(self) -> int:
        return self.times.l

    @property
    def n(self) -> int:
        return 2 * self.k

    def segment_index(self, tau: ArrayLike) -> NDArray[np.int64]:
        """Segment containing each time; interior knots belong to the left segment."""
        t = self.times.t
        tau = np.asarray(tau, dtype=np.float64)
        if np.any(tau < t[0]) or np.any(tau > t[-1]) or np.any(np.isnan(tau)):
            raise OutOfDomainError(f"query outside [{t[0]}, {t[-1]}]")
        idx = np.searchsorted(t, tau, side="left") - 1
        return np.clip(idx, 0, self.l - 1)

    def eval(self, tau: ArrayLike, q: int = 0) -> NDArray[np.float64] | float:
        """q-th absolute-time derivative at ``tau`` (scalar or array)."""
        if not 0 <= q:
            raise InvalidInputError("derivative order must be non-negative")
        scalar = np.ndim(tau) == 0
        tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
        idx = self.segment_index(tau)
        d = self.times.d[idx]
        rho = (tau - self.times.midpoints[idx]) / d
        n = self.n
        out = np.zeros_like(rho)
        a = self.coeffs[idx]
        # Horner on the differentiated coefficients
        for j in range(n - 1, q - 1, -1):
            out = out * rho + a[:, j] * _falling(j, q)
        out = out * d ** (-q)
        return float(out[0]) if scalar else out

    def endpoint_stacks(self) -> NDArray[np.float64]:
        """f_i for every segment: derivatives 0..k-1 at both ends, absolute time."""
        V = endpoint_map(self.k)
        S = self.times.d[:, None] ** -derivative_orders(self.k)[None, :]
        return S * (self.coeffs @ V.T)

    def shifted(self, alpha: float) -> Spline:
        return Spline(self.k, self.times.shifted(alpha), self.coeffs)


def eval_spline(s: Spline, tau: float, q: int = 0) -> float:
    return s.eval(tau, q)
