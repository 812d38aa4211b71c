import math

import numpy as np
import pytest

from paramlearn import (
    ContractError,
    ParamCurve,
    TimeGrid,
    classical_solution,
    custom_model,
    diffusion_case,
    diffusion_model,
    drift_case,
    drift_model,
    general_case,
    general_model,
    gibbs_at,
    named_cost,
    solve,
)
from paramlearn.closed_form import export_curves


def central(f, t, h=1e-4):
    return (f(t + h) - f(t - h)) / (2 * h)


def off_knot_times(knots, n=200, h=1e-4, window=2e-3):
    t = np.linspace(0.01, 0.99, n)
    if len(knots):
        t = t[np.min(np.abs(t[:, None] - np.asarray(knots)[None, :]), axis=1) > window]
    return t


class TestDiffusionCase:
    def test_beta_half_gives_unit_a1(self, grid):
        v, pol = diffusion_case(ParamCurve.constant(0.5), 0.1, grid)
        t = grid.nodes
        np.testing.assert_array_equal(v.a1(t), 1.0)
        np.testing.assert_allclose(pol.var(t), 0.05, rtol=1e-15)

    def test_beta_zero(self, grid):
        v, pol = diffusion_case(ParamCurve.constant(0.0), 0.1, grid)
        assert v.a1(0.0) == pytest.approx(math.e, rel=1e-15)
        assert pol.var(0.0) == pytest.approx(0.1 / (2 * math.e), rel=1e-15)

    def test_log_of_one_gives_zero_a2(self, grid):
        v, _ = diffusion_case(ParamCurve.constant(0.5), 1 / math.pi, grid)
        np.testing.assert_allclose(v.a2(grid.nodes), 0.0, atol=1e-15)

    def test_a2_matches_exact_antiderivative(self, grid):
        # beta constant: ln a1(s) = r (T - s), so a2(t) = -(lam/2)[(T-t) ln(pi lam) - r (T-t)^2 / 2].
        lam, beta = 0.1, 0.3
        v, _ = diffusion_case(ParamCurve.constant(beta), lam, grid)
        t = np.linspace(0, 1, 37)
        r = 1 - 2 * beta
        exact = -(lam / 2) * ((1 - t) * math.log(math.pi * lam) - r * (1 - t) ** 2 / 2)
        np.testing.assert_allclose(v.a2(t), exact, atol=1e-13)

    def test_terminal_conditions(self, grid, two_piece):
        v, _ = diffusion_case(two_piece, 0.1, grid)
        assert v.a1(1.0) == 1.0
        assert v.a2(1.0) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("lam", [0.0, -0.1])
    def test_positive_temperature(self, grid, lam):
        with pytest.raises(ContractError):
            diffusion_case(ParamCurve.constant(0.3), lam, grid)


class TestODEResiduals:
    """Central differences of the computed curves against the defining ODEs, off the knots."""

    @pytest.mark.parametrize("lam", [0.05, 0.1, 1.0])
    def test_diffusion(self, grid, two_piece, lam):
        v, _ = diffusion_case(two_piece, lam, grid)
        t = off_knot_times(two_piece.interior_knots)
        h = 1e-4
        r1 = central(v.a1, t, h) + (1 - 2 * two_piece(t)) * v.a1(t)
        r2 = central(v.a2, t, h) - (lam / 2) * np.log(math.pi * lam / v.a1(t))
        # O(h^2) differencing error with h = 1e-4.
        assert np.max(np.abs(r1)) < 1e-7
        assert np.max(np.abs(r2)) < 1e-7

    def test_general_theta(self, grid, two_piece):
        alpha = ParamCurve([0.0, 0.3], [0.1, -0.2], 1.0)
        lam = 0.1
        sol = general_case(alpha, two_piece, lam, grid)
        knots = np.concatenate([alpha.interior_knots, two_piece.interior_knots])
        t = off_knot_times(knots)
        rate = 2 * (alpha(t) - two_piece(t)) - 1
        th1, th2 = sol.value1.a1, sol.value1.a2
        assert np.max(np.abs(central(th1, t) + rate * th1(t))) < 1e-7
        assert np.max(np.abs(central(th2, t) - (lam / 2) * np.log(math.pi * lam / th1(t)))) < 1e-7

    def test_drift_identities(self, grid, two_piece):
        lam = 0.2
        v, _ = drift_case(two_piece, lam, grid)
        t = np.linspace(0.01, 0.99, 50)
        np.testing.assert_array_equal(v.a1(t), 0.0)
        np.testing.assert_allclose(central(v.a2, t), (lam / 2) * math.log(math.pi * lam), rtol=1e-8)

    def test_step_is_resolved_at_grid_scale(self):
        """a2 error stays O(dt^4) even when a knot falls between grid nodes."""
        beta = ParamCurve([0.0, 0.333], [0.0, 1.0], 1.0)
        coarse = diffusion_case(beta, 0.1, TimeGrid(0.0, 1.0, 10))[0]
        fine = diffusion_case(beta, 0.1, TimeGrid(0.0, 1.0, 2000))[0]
        t = np.linspace(0, 1, 21)
        assert np.max(np.abs(coarse.a2(t) - fine.a2(t))) < 1e-8


class TestDriftCase:
    def test_terminal(self, grid, two_piece):
        v, _ = drift_case(two_piece, 0.3, grid)
        assert v.a2(1.0) == 0.0

    def test_log_of_one(self, grid, beta03):
        v, _ = drift_case(beta03, 1 / math.pi, grid)
        np.testing.assert_allclose(v.a2(grid.nodes), 0.0, atol=1e-15)

    def test_variance(self, grid, beta03):
        _, pol = drift_case(beta03, 0.2, grid)
        np.testing.assert_allclose(pol.var(grid.nodes), 0.1, rtol=1e-15)


class TestGeneralCase:
    def test_zero_rate(self, grid):
        sol = general_case(ParamCurve.constant(0.75), ParamCurve.constant(0.25), 0.1, grid)
        np.testing.assert_allclose(sol.value1.a1(grid.nodes), 1.0)
        np.testing.assert_allclose(sol.policy1.var(grid.nodes), 0.05, rtol=1e-15)

    def test_equal_parameters(self, grid):
        sol = general_case(ParamCurve.constant(0.4), ParamCurve.constant(0.4), 0.1, grid)
        assert sol.value1.a1(0.0) == pytest.approx(math.exp(-1), rel=1e-15)

    def test_reduces_to_diffusion_case(self, grid, two_piece):
        """With alpha = 1 the first step is the diffusion-parameter problem."""
        sol = general_case(ParamCurve.constant(1.0), two_piece, 0.1, grid)
        v, pol = diffusion_case(two_piece, 0.1, grid)
        t = np.linspace(0, 1, 41)
        np.testing.assert_allclose(sol.value1.a1(t), v.a1(t), rtol=1e-15)
        np.testing.assert_allclose(sol.value1.a2(t), v.a2(t), atol=1e-15)
        np.testing.assert_allclose(sol.policy1.var(t), pol.var(t), rtol=1e-15)
        np.testing.assert_array_equal(sol.policy1.mean_slope(t), pol.mean_slope(t))

    def test_zero_parameters_do_not_reduce(self, grid):
        """alpha = beta = 0 gives theta1 = exp(-(T-t)), not the diffusion-case e^(T-t)."""
        sol = general_case(ParamCurve.constant(0.0), ParamCurve.constant(0.0), 0.1, grid)
        v, _ = diffusion_case(ParamCurve.constant(0.0), 0.1, grid)
        assert sol.value1.a1(0.0) == pytest.approx(math.exp(-1))
        assert v.a1(0.0) == pytest.approx(math.e)

    def test_policies(self, grid):
        a, b = ParamCurve.constant(0.2), ParamCurve.constant(0.4)
        sol = general_case(a, b, 0.1, grid)
        t = grid.nodes
        np.testing.assert_array_equal(sol.policy1.mean_slope(t), 0.4)
        np.testing.assert_array_equal(sol.policy2.mean_slope(t), 0.2)
        np.testing.assert_allclose(sol.policy2.var(t), 0.05)


class TestClassical:
    def test_matches_exploratory_a1(self, grid, two_piece):
        v, fb = classical_solution(two_piece, grid)
        ve, _ = diffusion_case(two_piece, 0.1, grid)
        t = grid.nodes
        np.testing.assert_array_equal(v.a1(t), ve.a1(t))
        np.testing.assert_array_equal(v.a2(t), 0.0)

    def test_beta_half(self, grid):
        v, _ = classical_solution(ParamCurve.constant(0.5), grid)
        assert v(0.3, 2.0) == 4.0

    def test_feedback_at_origin(self, grid, two_piece):
        _, fb = classical_solution(two_piece, grid)
        assert fb(0.7, 0.0) == 0.0
        assert fb(0.7, 2.0) == 1.0


class TestConsistencyWithGibbs:
    @pytest.mark.parametrize(
        "model,params",
        [
            (diffusion_model(), (ParamCurve([0.0, 0.5], [0.2, 0.5], 1.0),)),
            (drift_model(), (ParamCurve([0.0, 0.5], [0.2, 0.5], 1.0),)),
            (general_model(1), (ParamCurve.constant(0.2), ParamCurve.constant(0.4))),
            (general_model(2), (ParamCurve.constant(0.2), ParamCurve.constant(0.4))),
        ],
        ids=lambda m: getattr(m, "name", ""),
    )
    def test_21x21_grid(self, grid, model, params):
        v, pol = solve(model, params, 0.1, grid)
        spec = named_cost(model, 0.1)
        worst = 0.0
        for t in np.linspace(0, 1, 21):
            for x in np.linspace(-2, 2, 21):
                d = gibbs_at(model, v, spec, params, t, x)
                worst = max(worst, np.max(np.abs(d.density - pol.pdf(t, x, d.rho))))
        assert worst < 1e-6

    @pytest.mark.parametrize("model", [diffusion_model(), drift_model(), general_model(1), general_model(2)],
                             ids=lambda m: m.name)
    def test_mean_slope_is_the_parameter(self, grid, model):
        params = (ParamCurve.constant(0.2), ParamCurve.constant(0.4))[-model.n_params:]
        _, pol = solve(model, params, 0.1, grid)
        np.testing.assert_array_equal(pol.mean_slope(grid.nodes), params[model.estimated](grid.nodes))

    def test_custom_has_no_closed_form(self, grid):
        with pytest.raises(ContractError):
            solve(custom_model(lambda p, x, r: r, lambda p, x, r: r), (ParamCurve.constant(0.1),), 0.1, grid)


def test_export_curves(tmp_path, grid, beta03):
    v, pol = diffusion_case(beta03, 0.1, grid)
    p = tmp_path / "c.csv"
    export_curves(p, grid, v, pol)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,alpha1,alpha2,mean_slope,variance"
    assert len(lines) == grid.n_steps + 2
    first = [float(s) for s in lines[1].split(",")]
    assert first[0] == 0.0 and first[1] == v.a1(0.0) and first[3] == 0.3
