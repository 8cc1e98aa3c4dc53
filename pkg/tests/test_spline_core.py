from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import gram_quadrature, monomial_stack_sym

from splinetraj.spline_core import (
    InvalidInputError,
    OutOfDomainError,
    Pin,
    Spline,
    TimeAllocation,
    basis_derivative_matrix,
    cost_gram,
    endpoint_map,
    eval_spline,
    expand_pins,
    scaling_block,
)


class TestBasis:
    def test_at_zero(self):
        assert np.array_equal(basis_derivative_matrix(0.0, 2), [[1, 0, 0, 0], [0, 1, 0, 0]])

    def test_at_one(self):
        assert np.array_equal(basis_derivative_matrix(1.0, 2), [[1, 1, 1, 1], [0, 1, 2, 3]])

    def test_at_minus_one(self):
        assert np.array_equal(basis_derivative_matrix(-1.0, 2), [[1, -1, 1, -1], [0, 1, -2, 3]])

    @pytest.mark.parametrize("k", range(1, 7))
    @pytest.mark.parametrize("rho", [-1, 0, 1])
    def test_matches_symbolic(self, k, rho):
        assert np.array_equal(basis_derivative_matrix(float(rho), k), monomial_stack_sym(rho, k))

    def test_rejects_k0(self):
        with pytest.raises(InvalidInputError):
            basis_derivative_matrix(0.0, 0)


class TestEndpointMap:
    def test_k1(self):
        assert np.array_equal(endpoint_map(1), [[1, -1], [1, 1]])

    def test_k2(self):
        expected = [[1, -1, 1, -1], [0, 1, -2, 3], [1, 1, 1, 1], [0, 1, 2, 3]]
        assert np.array_equal(endpoint_map(2), expected)

    @pytest.mark.parametrize("k", range(1, 7))
    def test_invertible(self, k):
        assert abs(np.linalg.det(endpoint_map(k))) > 1e-6

    @pytest.mark.parametrize("k", range(1, 7))
    def test_matches_symbolic_stack(self, k):
        rng = np.random.default_rng(k)
        a = rng.normal(size=2 * k)
        V = np.vstack([monomial_stack_sym(-1, k), monomial_stack_sym(1, k)])
        np.testing.assert_allclose(endpoint_map(k) @ a, V @ a, rtol=0, atol=1e-12)


class TestCostGram:
    def test_k2(self):
        expected = [[0, 0, 0, 0], [0, 2, 0, 2], [0, 0, 8 / 3, 0], [0, 2, 0, 18 / 5]]
        np.testing.assert_allclose(cost_gram(2), expected, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("k", range(1, 7))
    def test_low_rows_zero(self, k):
        H = cost_gram(k)
        assert not H[: k - 1].any() and not H[:, : k - 1].any()

    @pytest.mark.parametrize("k", range(1, 7))
    def test_psd_symmetric(self, k):
        H = cost_gram(k)
        assert np.array_equal(H, H.T)
        assert np.linalg.eigvalsh(H).min() > -1e-9

    @pytest.mark.parametrize("k", range(1, 7))
    def test_matches_quadrature(self, k):
        H = cost_gram(k)
        Q = gram_quadrature(k)
        np.testing.assert_allclose(H, Q, rtol=1e-12, atol=1e-12 * np.abs(Q).max())


class TestScalingBlock:
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_unit(self, k):
        assert np.array_equal(scaling_block(1.0, k), np.eye(2 * k))

    def test_half(self):
        assert np.array_equal(np.diag(scaling_block(0.5, 2)), [1, 2, 1, 2])

    def test_two(self):
        assert np.array_equal(np.diag(scaling_block(2.0, 3)), [1, 0.5, 0.25, 1, 0.5, 0.25])

    @pytest.mark.parametrize("delta", [0.0, -1.0])
    def test_rejects_nonpositive(self, delta):
        with pytest.raises(InvalidInputError):
            scaling_block(delta, 2)


class TestTimeAllocation:
    def test_from_durations(self):
        ta = TimeAllocation.from_durations([0.5, 0.5, 1.0])
        assert np.array_equal(ta.t, [0, 1, 2, 4])
        assert np.array_equal(ta.d, [0.5, 0.5, 1.0])

    @pytest.mark.parametrize("t", [[0.0], [0.0, 0.0], [1.0, 0.0], [0.0, np.inf]])
    def test_rejects(self, t):
        with pytest.raises(InvalidInputError):
            TimeAllocation(t)

    def test_rejects_nonpositive_durations(self):
        with pytest.raises(InvalidInputError):
            TimeAllocation.from_durations([1.0, 0.0])


def _pinned_matrix(ex, l, k, pins):
    """Global P (rows: pins at segment level) and b from the expansion."""
    rows, b = [], []
    for i in range(l):
        P_i, b_i = ex.row_selector(i)
        for r, v in zip(P_i, b_i):
            row = np.zeros(l * 2 * k)
            row[i * 2 * k : (i + 1) * 2 * k] = r
            rows.append(row)
            b.append(v)
    return np.array(rows).reshape(-1, l * 2 * k), np.array(b)


class TestExpandPins:
    def test_single_segment(self):
        ex = expand_pins([(0, 0, 0.0), (1, 0, 1.0)], 1, 2)
        assert np.array_equal(ex.fbar[0], [0, 0, 1, 0])
        assert np.array_equal(ex.free_index(0), [1, 3])
        assert ex.mu_minus[0] == 1 and ex.mu_plus[0] == 1

    def test_interior_duplicated(self):
        ex = expand_pins([(1, 0, 5.0)], 2, 2)
        assert ex.fbar[0, 2] == 5.0 and ex.fbar[1, 0] == 5.0
        assert not ex.free[0, 2] and not ex.free[1, 0]
        assert ex.mu_plus[0] == ex.mu_minus[1] == 1

    def test_no_pins(self):
        ex = expand_pins([], 1, 2)
        assert np.array_equal(ex.selector(0), np.eye(4))
        assert not ex.fbar.any()

    @pytest.mark.parametrize("pin", [(0, 2, 0.0), (3, 0, 0.0), (-1, 0, 0.0), (0, 0, np.nan)])
    def test_rejects_bad_pin(self, pin):
        with pytest.raises(InvalidInputError):
            expand_pins([pin], 2, 2)

    def test_rejects_duplicate(self):
        with pytest.raises(InvalidInputError):
            expand_pins([(1, 0, 1.0), (1, 0, 2.0)], 2, 2)

    @given(
        l=st.integers(1, 8),
        k=st.integers(1, 5),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_selector_identities(self, l, k, seed):
        rng = np.random.default_rng(seed)
        slots = [(i, q) for i in range(l + 1) for q in range(k)]
        chosen = rng.choice(len(slots), size=rng.integers(0, len(slots) + 1), replace=False)
        pins = [Pin(*slots[j], float(rng.normal())) for j in chosen]
        ex = expand_pins(pins, l, k)
        P, b = _pinned_matrix(ex, l, k, pins)
        fbar = ex.fbar.ravel()
        Z = np.zeros((l * 2 * k, 0))
        for i in range(l):
            Zi = np.zeros((l * 2 * k, ex.selector(i).shape[1]))
            Zi[i * 2 * k : (i + 1) * 2 * k] = ex.selector(i)
            Z = np.hstack([Z, Zi])
        np.testing.assert_array_equal(P @ fbar, b)
        assert not (P @ Z).any()
        # every P row has a single nonzero
        assert np.all((P != 0).sum(axis=1) == 1)
        assert np.array_equal(ex.mu_plus[:-1], ex.mu_minus[1:])
        for pin in pins:
            if pin.knot > 0:
                assert ex.fbar[pin.knot - 1, k + pin.deriv] == pin.value
            if pin.knot < l:
                assert ex.fbar[pin.knot, pin.deriv] == pin.value


class TestSpline:
    def test_constant(self):
        coeffs = np.zeros((2, 4))
        coeffs[:, 0] = 3.5
        s = Spline(2, TimeAllocation([0.0, 1.0, 3.0]), coeffs)
        tau = np.linspace(0, 3, 17)
        assert np.array_equal(s.eval(tau), np.full(17, 3.5))
        for q in (1, 2, 3):
            assert not np.any(s.eval(tau, q))

    def test_hermite_cubic(self):
        s = Spline(2, TimeAllocation([-1.0, 1.0]), [[0.5, 0.75, 0.0, -0.25]])
        assert eval_spline(s, 1.0, 0) == pytest.approx(1.0, abs=1e-15)
        assert eval_spline(s, 1.0, 1) == pytest.approx(0.0, abs=1e-15)
        assert eval_spline(s, -1.0, 0) == pytest.approx(0.0, abs=1e-15)

    def test_tie_goes_left(self):
        coeffs = np.zeros((2, 2))
        coeffs[0, 0], coeffs[1, 0] = 1.0, 2.0
        s = Spline(1, TimeAllocation([0.0, 1.0, 2.0]), coeffs)
        assert s.eval(1.0) == 1.0
        assert s.segment_index(np.array([0.0, 1.0, 1.5, 2.0])).tolist() == [0, 0, 1, 1]

    @pytest.mark.parametrize("tau", [-1e-9, 2.0 + 1e-9, np.nan])
    def test_out_of_domain(self, tau):
        s = Spline(1, TimeAllocation([0.0, 2.0]), [[0.0, 1.0]])
        with pytest.raises(OutOfDomainError):
            s.eval(tau)

    def test_chain_rule(self):
        # rho^3 on [2, 6]: delta = 2, so d/dtau = 3 rho^2 / 2
        s = Spline(2, TimeAllocation([2.0, 6.0]), [[0, 0, 0, 1.0]])
        assert s.eval(5.0, 1) == pytest.approx(3 * 0.5**2 / 2)
        assert s.eval(5.0, 3) == pytest.approx(6 / 8)

    def test_coeff_shape_checked(self):
        with pytest.raises(InvalidInputError):
            Spline(2, TimeAllocation([0.0, 1.0]), np.zeros((1, 3)))

    @given(
        seed=st.integers(0, 2**32 - 1),
        shift=st.integers(-1000, 1000),
        k=st.integers(1, 5),
    )
    def test_shift_reproduces_values(self, seed, shift, k):
        rng = np.random.default_rng(seed)
        l = int(rng.integers(1, 6))
        # dyadic knots and query points keep every time difference exact
        d = rng.integers(1, 8, size=l) / 4.0
        times = TimeAllocation.from_durations(d, float(rng.integers(-10, 10)))
        s = Spline(k, times, rng.normal(size=(l, 2 * k)))
        tau = times.t[0] + rng.integers(0, int(8 * (times.t[-1] - times.t[0])) + 1, size=20) / 8.0
        for q in range(2 * k):
            assert np.array_equal(s.shifted(shift).eval(tau + shift, q), s.eval(tau, q))

    def test_endpoint_stacks_match_eval(self):
        rng = np.random.default_rng(0)
        k = 3
        times = TimeAllocation.from_durations([0.3, 1.7, 0.9], 4.0)
        s = Spline(k, times, rng.normal(size=(3, 2 * k)))
        f = s.endpoint_stacks()
        for i in range(3):
            for q in range(k):
                # approach the knots from inside the segment via the polynomial itself
                left = Spline(k, TimeAllocation([times.t[i], times.t[i + 1]]), s.coeffs[i : i + 1])
                assert f[i, q] == pytest.approx(left.eval(times.t[i], q), rel=1e-12, abs=1e-12)
                assert f[i, k + q] == pytest.approx(left.eval(times.t[i + 1], q), rel=1e-12, abs=1e-12)
