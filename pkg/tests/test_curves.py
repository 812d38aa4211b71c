import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paramlearn import DomainError, ParamCurve, TimeGrid, curve_eval, curve_integral, exp_integral


class TestTimeGrid:
    def test_last_node_is_exactly_T(self):
        g = TimeGrid(0.0, 0.7, 3)
        assert g.nodes[-1] == 0.7
        assert np.all(np.diff(g.nodes) > 0)
        assert g.dt == pytest.approx(0.7 / 3)

    @pytest.mark.parametrize("n", [0, -1])
    def test_rejects_non_positive_steps(self, n):
        with pytest.raises(Exception):
            TimeGrid(0.0, 1.0, n)

    def test_rejects_empty_horizon(self):
        with pytest.raises(Exception):
            TimeGrid(1.0, 1.0, 10)

    def test_tail_ends_at_T(self):
        g = TimeGrid(0.0, 1.0, 100)
        sub = g.tail(40)
        assert sub.t0 == pytest.approx(0.4)
        assert sub.n_steps == 60
        assert sub.nodes[-1] == 1.0

    @given(st.floats(-5, 5), st.floats(0.01, 10), st.integers(1, 5000))
    def test_nodes_monotone_and_pinned(self, t0, length, n):
        g = TimeGrid(t0, t0 + length, n)
        assert g.nodes[0] == t0
        assert g.nodes[-1] == t0 + length
        assert np.all(np.diff(g.nodes) > 0)


class TestCurveEval:
    def test_constant(self):
        assert curve_eval(ParamCurve.constant(0.3), 0.7) == 0.3

    def test_right_continuous_at_knot(self, two_piece):
        assert curve_eval(two_piece, 0.5) == 0.5

    def test_left_of_knot(self, two_piece):
        assert curve_eval(two_piece, 0.4999) == 0.2

    def test_at_horizon_end_uses_last_piece(self, two_piece):
        assert curve_eval(two_piece, 1.0) == 0.5

    @pytest.mark.parametrize("t", [-0.01, 1.01, float("nan")])
    def test_outside_domain(self, two_piece, t):
        with pytest.raises(DomainError):
            two_piece(t)

    def test_vectorised(self, two_piece):
        np.testing.assert_array_equal(two_piece(np.array([0.0, 0.49, 0.5, 1.0])), [0.2, 0.2, 0.5, 0.5])

    @pytest.mark.parametrize(
        "knots,values,T",
        [([], [], 1.0), ([0.0, 0.5], [1.0], 1.0), ([0.5, 0.0], [1.0, 2.0], 1.0),
         ([0.0, 1.5], [1.0, 2.0], 1.0), ([0.0], [np.inf], 1.0)],
    )
    def test_invalid_construction(self, knots, values, T):
        with pytest.raises(DomainError):
            ParamCurve(knots, values, T)


class TestCurveIntegral:
    def test_unit_rectangle(self):
        assert curve_integral(ParamCurve.constant(1.0), 0.0, 1.0) == 1.0

    def test_symmetric_cancellation(self):
        c = ParamCurve([0.0, 0.5], [1.0, -1.0], 1.0)
        assert curve_integral(c, 0.0, 1.0) == 0.0

    def test_value_times_length(self):
        assert curve_integral(ParamCurve.constant(0.4), 0.25, 0.75) == pytest.approx(0.2, abs=1e-15)

    def test_reversed_limits(self):
        with pytest.raises(DomainError):
            curve_integral(ParamCurve.constant(1.0), 0.7, 0.2)

    @given(
        st.lists(st.floats(-3, 3), min_size=1, max_size=6),
        st.lists(st.floats(0, 1), min_size=3, max_size=3),
    )
    def test_additive(self, values, pts):
        knots = np.linspace(0.0, 1.0, len(values) + 1)[:-1]
        c = ParamCurve(knots, values, 1.0)
        a, b, d = sorted(pts)
        lhs = c.integral(a, d)
        rhs = c.integral(a, b) + c.integral(b, d)
        assert lhs == pytest.approx(rhs, abs=1e-13)


class TestExpIntegral:
    def test_zero_integrand(self):
        c = 1.0 - 2.0 * ParamCurve.constant(0.5)
        np.testing.assert_array_equal(exp_integral(c, np.linspace(0, 1, 11)), 1.0)

    def test_unit_integrand(self):
        assert exp_integral(ParamCurve.constant(1.0), 0.0) == pytest.approx(math.e, rel=1e-15)

    def test_piecewise_cancels(self):
        assert exp_integral(ParamCurve([0.0, 0.5], [1.0, -1.0], 1.0), 0.0) == pytest.approx(1.0, abs=1e-15)

    @given(
        st.lists(st.floats(-3, 3), min_size=1, max_size=6),
        st.lists(st.floats(0, 1), min_size=2, max_size=2),
    )
    def test_multiplicative(self, values, pts):
        knots = np.linspace(0.0, 1.0, len(values) + 1)[:-1]
        g = ParamCurve(knots, values, 1.0)
        s, t = sorted(pts)
        lhs = exp_integral(g, t, 1.0) * exp_integral(g, s, t)
        assert lhs == pytest.approx(exp_integral(g, s, 1.0), rel=1e-12)
        assert exp_integral(g, s) > 0


class TestArithmetic:
    def test_combine_merges_knots(self, two_piece):
        c = two_piece + ParamCurve([0.0, 0.25], [1.0, 2.0], 1.0)
        np.testing.assert_array_equal(c.knots, [0.0, 0.25, 0.5])
        np.testing.assert_allclose(c.values, [1.2, 2.2, 2.5])

    def test_scalar_ops(self, two_piece):
        c = 1.0 - 2.0 * two_piece
        np.testing.assert_allclose(c.values, [0.6, 0.0])

    def test_mismatched_horizons(self):
        with pytest.raises(DomainError):
            ParamCurve.constant(1.0, T=1.0) + ParamCurve.constant(1.0, T=2.0)

    def test_immutable(self, two_piece):
        with pytest.raises(ValueError):
            two_piece.values[0] = 3.0
