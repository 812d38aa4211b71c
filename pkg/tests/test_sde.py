import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from paramlearn import (
    ContractError,
    CostSpec,
    ExploratoryMean,
    Feedback,
    GaussianPolicy,
    ParamCurve,
    Randomized,
    SimulationError,
    SubstitutedCurve,
    TimeGrid,
    custom_model,
    diffusion_model,
    drift_model,
    evaluate_cost,
    general_model,
    path_equivalence,
    simulate,
)
from paramlearn.sde import THREADS_ENV, normal_block_matrix, worker_count


def decay_model():
    return custom_model(lambda p, x, r: -r + 0.0 * x, lambda p, x, r: 0.0 * x)


def frozen_model():
    return custom_model(lambda p, x, r: 0.0 * x, lambda p, x, r: 0.0 * x)


class TestDeterministicPaths:
    def test_linear_decay(self):
        grid = TimeGrid(0.0, 1.0, 64)  # dt = 1/64 is exact in binary
        b = simulate(decay_model(), SubstitutedCurve(ParamCurve.constant(0.5)), ParamCurve.constant(0.0),
                     1.0, grid, 7, seed=1)
        np.testing.assert_array_equal(b.states[:, -1], 0.5)

    def test_identity_one_step(self):
        b = simulate(frozen_model(), SubstitutedCurve(ParamCurve.constant(3.0)), ParamCurve.constant(0.0),
                     1.7, TimeGrid(0.0, 1.0, 1), 5, seed=1)
        np.testing.assert_array_equal(b.states, 1.7)

    def test_initial_state(self, grid, beta03):
        b = simulate(diffusion_model(), Randomized(GaussianPolicy(beta03, lambda t: 0.05 + 0 * t)),
                     beta03, -0.4, grid, 10, seed=2)
        np.testing.assert_array_equal(b.states[:, 0], -0.4)
        assert b.states.shape == (10, 101) and b.noise.shape == (10, 100) and b.controls.shape == (10, 100)

    def test_per_path_initial_states(self, grid, beta03):
        x0 = np.array([1.0, -2.0, 0.5])
        b = simulate(diffusion_model(), Feedback(lambda t, x: -x), beta03, x0, grid, 3, seed=2)
        np.testing.assert_array_equal(b.states[:, 0], x0)
        with pytest.raises(ContractError):
            simulate(diffusion_model(), Feedback(lambda t, x: -x), beta03, x0, grid, 4, seed=2)


class TestNoise:
    def test_increment_means(self, grid, beta03):
        n = 10_000
        b = simulate(diffusion_model(), Feedback(lambda t, x: -x), beta03, 1.0, grid, n, seed=3)
        assert np.all(np.abs(b.noise.mean(axis=0)) <= 5 * math.sqrt(grid.dt / n))
        assert b.noise.var() == pytest.approx(grid.dt, rel=0.01)

    def test_blocks_are_position_keyed(self):
        whole = normal_block_matrix(5, 0, 0, 1500, 3)
        part = normal_block_matrix(5, 0, 700, 1300, 3)
        np.testing.assert_array_equal(whole[700:1300], part)


class TestDeterminism:
    def run(self, workers, seed=11):
        grid = TimeGrid(0.0, 1.0, 50)
        pol = GaussianPolicy(ParamCurve.constant(0.3), lambda t: 0.05 + 0 * np.asarray(t))
        return simulate(diffusion_model(), Randomized(pol), ParamCurve.constant(0.3), 1.0, grid,
                        3000, seed, workers=workers)

    def test_independent_of_worker_count(self):
        a, b = self.run(1), self.run(4)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.controls, b.controls)

    def test_env_threads(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "3")
        assert worker_count() == 3
        monkeypatch.setenv(THREADS_ENV, "0")
        assert worker_count() == 1
        monkeypatch.delenv(THREADS_ENV)
        assert worker_count() >= 1
        monkeypatch.setenv(THREADS_ENV, "junk")
        with pytest.raises(ContractError):
            worker_count()

    def test_seed_matters(self):
        assert not np.array_equal(self.run(1, 11).states, self.run(1, 12).states)

    def test_read_only(self):
        b = self.run(1)
        with pytest.raises(ValueError):
            b.states[0, 0] = 1.0


class TestMomentOracles:
    def test_substituted_mean_matches_ode(self, beta03):
        """rho = beta x in the drift case gives dE[X]/dt = -E[X]."""
        grid = TimeGrid(0.0, 1.0, 1000)
        n = 100_000
        b = simulate(drift_model(), SubstitutedCurve(lambda t, x: 0.3 * x), beta03, 1.0, grid, n, seed=4)
        xt = b.states[:, -1]
        sol = solve_ivp(lambda t, y: -y, (0, 1), [1.0], rtol=1e-12, atol=1e-14)
        assert abs(xt.mean() - sol.y[0, -1]) <= 3 * xt.std(ddof=1) / math.sqrt(n)

    def test_weak_error_halves(self):
        """Constant rho: E[X] solves dE/dt = (beta - 1) E - rho; the Euler bias is O(dt)."""
        beta, rho, n = 0.5, 0.2, 1_000_000
        a = beta - 1
        ode = (1 - rho / a) * math.exp(a) + rho / a
        bias = []
        for steps in (25, 50):
            b = simulate(drift_model(), SubstitutedCurve(ParamCurve.constant(rho)), ParamCurve.constant(beta),
                         1.0, TimeGrid(0.0, 1.0, steps), n, seed=5)
            bias.append(b.states[:, -1].mean() - ode)
        assert 0.3 <= bias[1] / bias[0] <= 0.7


class TestCosts:
    def test_constant_functional(self, grid, beta03):
        b = simulate(diffusion_model(), Feedback(lambda t, x: -x), beta03, 1.0, grid, 50, seed=1)
        assert evaluate_cost(b, CostSpec(None, lambda x: np.ones_like(x), 0.1)) == (1.0, 0.0)

    def test_frozen_state(self, grid):
        b = simulate(frozen_model(), SubstitutedCurve(ParamCurve.constant(0.0)), ParamCurve.constant(0.0),
                     2.0, grid, 20, seed=1)
        assert evaluate_cost(b, CostSpec(None, np.square, 0.1)) == (4.0, 0.0)

    def test_classical_optimum(self, grid, beta03):
        m = diffusion_model()
        n = 100_000
        b = simulate(m, Feedback(lambda t, x: m.feedback((beta03(t),), x)), beta03, 1.0, grid, n, seed=6)
        est, se = evaluate_cost(b, CostSpec(None, np.square, 0.1))
        assert abs(est - math.exp(0.4)) <= 3 * se

    def test_running_cost_needs_controls(self, grid, beta03):
        b = simulate(drift_model(), Feedback(lambda t, x: -x), beta03, 1.0, grid, 10, seed=1)
        with pytest.raises(ContractError):
            evaluate_cost(b, CostSpec(lambda p, x, r: r * r, None, 0.1))

    def test_recorded_controls_feed_running_cost(self, grid, beta03):
        b = simulate(drift_model(), SubstitutedCurve(ParamCurve.constant(2.0)), beta03, 1.0, grid, 10, seed=1)
        est, se = evaluate_cost(b, CostSpec(lambda p, x, r: r * r, None, 0.1))
        assert est == pytest.approx(4.0, rel=1e-12) and se == pytest.approx(0.0, abs=1e-12)

    def test_entropy_only_cost(self, grid, beta03):
        # f = 0, Phi = 0: J = lam * (T - t0) * (-1/2) ln(2 pi e var).
        pol = GaussianPolicy(beta03, lambda t: 0.05 + 0 * np.asarray(t))
        b = simulate(drift_model(), ExploratoryMean(pol), beta03, 1.0, grid, 5, seed=1)
        est, _ = evaluate_cost(b, CostSpec(None, None, 0.1), pol)
        assert est == pytest.approx(-0.05 * math.log(2 * math.pi * math.e * 0.05), rel=1e-12)


class TestPathEquivalence:
    def test_diffusion(self, grid, beta03):
        assert path_equivalence(diffusion_model(), beta03, 1.0, grid, 100, seed=42) == 0.0

    def test_drift(self, grid):
        assert path_equivalence(drift_model(), ParamCurve.constant(0.5), 1.0, grid, 100, seed=42) == 0.0

    @pytest.mark.parametrize("step", [1, 2])
    def test_general(self, grid, step):
        params = (ParamCurve.constant(0.2), ParamCurve.constant(0.4))
        assert path_equivalence(general_model(step), params, 1.0, grid, 100, seed=42) == 0.0

    def test_time_varying(self, grid, two_piece):
        assert path_equivalence(diffusion_model(), two_piece, -1.3, grid, 100, seed=3) == 0.0

    def test_custom_rejected(self, grid):
        with pytest.raises(ContractError):
            path_equivalence(decay_model(), ParamCurve.constant(0.1), 1.0, grid, 10, 1)


class TestErrors:
    def test_blow_up_names_path_and_step(self, grid):
        m = custom_model(lambda p, x, r: 1e150 * x ** 3, lambda p, x, r: 0.0 * x)
        with pytest.raises(SimulationError) as exc:
            simulate(m, SubstitutedCurve(ParamCurve.constant(0.0)), ParamCurve.constant(0.0), 1.0, grid, 3, 1)
        assert exc.value.path == 0 and exc.value.step >= 1

    def test_variance_must_be_positive(self, grid, beta03):
        pol = GaussianPolicy(beta03, lambda t: 0.0 * np.asarray(t))
        with pytest.raises(ContractError):
            simulate(diffusion_model(), Randomized(pol), beta03, 1.0, grid, 10, 1)

    def test_wrong_parameter_count(self, grid, beta03):
        with pytest.raises(ContractError):
            simulate(general_model(1), Feedback(lambda t, x: -x), beta03, 1.0, grid, 10, 1)

    def test_curve_must_cover_grid(self, beta03):
        with pytest.raises(ContractError):
            simulate(diffusion_model(), Feedback(lambda t, x: -x), beta03, 1.0, TimeGrid(0, 2, 10), 10, 1)

    def test_feedback_needs_original_coefficients(self, grid):
        with pytest.raises(ContractError):
            simulate(decay_model(), Feedback(lambda t, x: -x), ParamCurve.constant(0.1), 1.0, grid, 10, 1)

    def test_no_paths(self, grid, beta03):
        with pytest.raises(ContractError):
            simulate(diffusion_model(), Feedback(lambda t, x: -x), beta03, 1.0, grid, 0, 1)


def test_csv_export(tmp_path, beta03):
    grid = TimeGrid(0.0, 1.0, 4)
    pol = GaussianPolicy(beta03, lambda t: 0.05 + 0 * np.asarray(t))
    b = simulate(diffusion_model(), Randomized(pol), beta03, 1.0, grid, 2, seed=1)
    p = tmp_path / "paths.csv"
    b.to_csv(p)
    raw = p.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "path,step,time,state,control"
    assert len(lines) == 1 + 2 * 5
    assert lines[5].endswith(",")  # no control after the last step
    assert float(lines[2].split(",")[3]) == b.states[0, 1]
    assert float(lines[1].split(",")[4]) == b.controls[0, 0]
