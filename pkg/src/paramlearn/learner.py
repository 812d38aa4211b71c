"""
Parameter recovery from interaction data.

The environment simulates episodes with the true parameters under the
optimal randomized policy; the learner only sees ``(t, x, rho)`` triples.
Because every optimal policy in the named cases has mean ``c(t) x`` with
``c`` equal to the unknown parameter, the parameter is recovered as the
slope of ``rho`` on ``x`` through the origin, bucket by bucket in time.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import closed_form
from .curves import ParamCurve, TimeGrid
from .errors import (
    ContractError,
    DegenerateRegressorError,
    NonIntegrableError,
    PolicyIterationError,
)
from .gibbs import GaussianPolicy, QuadraticValue, policy_from_value
from .models import Case, CoefficientModel, custom_model, general_model, named_cost
from .sde import ExploratoryMean, Randomized, pathwise_cost, simulate

__all__ = [
    "SampleBatch",
    "EstimateResult",
    "fit_mean_slope",
    "ratio_estimate",
    "collect_batches",
    "estimate_beta",
    "two_step_estimate",
    "plug_in_step2_model",
    "policy_iteration",
    "IterationRecord",
    "write_trace_csv",
    "PROBE_STATES",
]

log = logging.getLogger(__name__)

REGRESSOR_EPS = 1e-6
MIN_PAIRS = 30
MIN_EPISODES = 100
PROBE_STATES = (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """``(x, rho)`` pairs observed inside one time bucket ``[start, stop)``."""

    knot_index: int
    start: float
    x: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        rho = np.asarray(self.rho, dtype=float).ravel()
        if x.shape != rho.shape:
            raise ContractError(f"{x.size} states but {rho.size} controls")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "rho", rho)

    def __len__(self):
        return self.x.size

    def validate(self, min_pairs: int = MIN_PAIRS) -> None:
        if len(self) < min_pairs:
            raise ContractError(
                f"bucket {self.knot_index} at t={self.start:g} has {len(self)} pairs, "
                f"need at least {min_pairs}"
            )
        if np.all(np.abs(self.x) < REGRESSOR_EPS):
            raise DegenerateRegressorError(f"all states in bucket {self.knot_index} are ~0")


@dataclass(frozen=True, eq=False)
class EstimateResult:
    """Piecewise-constant estimate with per-knot standard errors."""

    name: str
    curve: ParamCurve
    std_errors: np.ndarray
    n_samples: np.ndarray
    true_values: Optional[np.ndarray] = None

    @property
    def knots(self) -> np.ndarray:
        return self.curve.knots

    @property
    def estimates(self) -> np.ndarray:
        return self.curve.values

    def within(self, n_se: float = 3.0) -> np.ndarray:
        """Per-knot coverage ``|estimate - truth| <= n_se * std_error``."""
        if self.true_values is None:
            raise ContractError("no true values recorded")
        return np.abs(self.estimates - self.true_values) <= n_se * self.std_errors

    def to_csv(self, path) -> None:
        header = ["knot_time", "estimate", "std_error", "n_samples"]
        if self.true_values is not None:
            header.append("true_value")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(self.knots.size):
                row = [format(self.knots[i], ".17g"), format(self.estimates[i], ".17g"),
                       format(self.std_errors[i], ".17g"), int(self.n_samples[i])]
                if self.true_values is not None:
                    row.append(format(self.true_values[i], ".17g"))
                w.writerow(row)


def fit_mean_slope(batch) -> tuple:
    """
    Least-squares slope of ``rho`` on ``x`` through the origin.

    Parameters
    ----------
    batch : SampleBatch or tuple of arrays ``(x, rho)``

    Returns
    -------
    slope, std_error
        ``sum(x rho) / sum(x^2)`` and ``s / sqrt(sum(x^2))`` with ``s^2`` the
        residual variance on ``n - 1`` degrees of freedom. Noiseless data give
        a zero standard error.
    """
    if isinstance(batch, SampleBatch):
        x, rho = batch.x, batch.rho
    else:
        x, rho = (np.asarray(a, dtype=float).ravel() for a in batch)
    if x.size < 2:
        raise ContractError("slope fit needs at least two pairs")
    sxx = float(np.dot(x, x))
    if sxx < REGRESSOR_EPS ** 2:
        raise DegenerateRegressorError(f"sum of squared states {sxx:.3g} is below {REGRESSOR_EPS ** 2:g}")
    slope = float(np.dot(x, rho)) / sxx
    resid = rho - slope * x
    s2 = float(np.dot(resid, resid)) / (x.size - 1)
    return slope, math.sqrt(s2 / sxx)


def ratio_estimate(batch, guard: float = 0.1) -> tuple:
    """
    Average of ``rho / x`` over pairs with ``|x| >= guard``; a noisier
    cross-check of :func:`fit_mean_slope`.
    """
    if isinstance(batch, SampleBatch):
        x, rho = batch.x, batch.rho
    else:
        x, rho = (np.asarray(a, dtype=float).ravel() for a in batch)
    keep = np.abs(x) >= guard
    if keep.sum() < 2:
        raise DegenerateRegressorError(f"fewer than two states with |x| >= {guard}")
    r = rho[keep] / x[keep]
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(r.size))


def _bucket_knots(curve: ParamCurve, knots) -> np.ndarray:
    if knots is None:
        return np.asarray(curve.knots, dtype=float)
    k = np.asarray(knots, dtype=float)
    if k.ndim != 1 or k.size == 0 or np.any(np.diff(k) <= 0):
        raise ContractError("bucket knots must be a non-empty increasing sequence")
    return k


def collect_batches(states: np.ndarray, controls: np.ndarray, grid: TimeGrid, knots) -> list:
    """Group the ``(X_k, rho_k)`` pairs of every path by the knot interval containing ``t_k``."""
    t = grid.nodes[:-1]
    knots = np.asarray(knots, dtype=float)
    if knots[0] > t[0] + 1e-12:
        raise ContractError("first bucket knot lies after the start of the grid")
    idx = np.searchsorted(knots, t + 1e-12, side="right") - 1
    batches = []
    for j, start in enumerate(knots):
        cols = np.nonzero(idx == j)[0]
        batches.append(SampleBatch(j, float(start), states[:, cols], controls[:, cols]))
    return batches


def _estimate(name, model, params, policy, true_curve, grid, episodes, seed, knots, x0):
    if episodes < MIN_EPISODES:
        raise ContractError(f"need at least {MIN_EPISODES} episodes, got {episodes}")
    bundle = simulate(model, Randomized(policy), params, x0, grid, episodes, seed)
    knots = _bucket_knots(true_curve, knots)
    batches = collect_batches(bundle.states[:, :-1], bundle.controls, grid, knots)
    est, se, n = [], [], []
    for b in batches:
        b.validate()
        s, e = fit_mean_slope(b)
        est.append(s)
        se.append(e)
        n.append(len(b))
    curve = ParamCurve(knots, np.asarray(est), grid.T)
    truth = np.asarray(true_curve(knots), dtype=float)
    return EstimateResult(name, curve, np.asarray(se), np.asarray(n), truth)


def estimate_beta(
    model: CoefficientModel,
    true_params: Sequence[ParamCurve],
    lam: float,
    grid: TimeGrid,
    episodes: int,
    seed: int,
    *,
    knots=None,
    x0: float = 1.0,
    policy: Optional[GaussianPolicy] = None,
) -> EstimateResult:
    """
    Recover the substituted parameter from episodes under its optimal policy.

    Parameters
    ----------
    model : CoefficientModel
        A named model; ``model.estimated`` selects the curve being learned.
    true_params : sequence of ParamCurve
        Used by the environment only.
    lam : float
    grid : TimeGrid
    episodes : int
        Independent episodes, each restarted from ``x0``.
    seed : int
    knots : array_like, optional
        Bucket start times; defaults to the knots of the true curve.
    policy : GaussianPolicy, optional
        Data-collection policy; defaults to the closed-form optimum.
    """
    true_params = tuple(true_params)
    if policy is None:
        _, policy = closed_form.solve(model, true_params, lam, grid)
    name = model.param_names[model.estimated]
    return _estimate(name, model, true_params, policy, true_params[model.estimated],
                     grid, episodes, seed, knots, x0)


def _b_hat_plugin(p, x, rho):
    alpha, _, beta_hat = p
    return (alpha - beta_hat) * x - rho


def _sigma_hat_plugin(p, x, rho):
    _, beta, beta_hat = p
    return (beta - beta_hat) * x - rho


def _plugin_b(p, x, u):
    return p[0] * x + u


def _plugin_sigma(p, x, u):
    return p[1] * x + u


def _plugin_control(p, x, rho):
    return -rho - p[2] * x


def plug_in_step2_model() -> CoefficientModel:
    """
    Second step with the first-step estimate ``beta_hat`` inside the control.

    Parameters are ``(alpha, beta, beta_hat)``: the environment evolves with
    the true ``alpha`` and ``beta`` while the substituted input is
    ``-rho - beta_hat x``. With ``beta_hat = beta`` this is the exact
    second-step model.
    """
    return custom_model(
        _b_hat_plugin, _sigma_hat_plugin, ("alpha", "beta", "beta_hat"), estimated=0,
        b=_plugin_b, sigma=_plugin_sigma, control=_plugin_control,
    )


def _sub_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def two_step_estimate(
    alpha: ParamCurve,
    beta: ParamCurve,
    lam: float,
    grid: TimeGrid,
    episodes: int,
    seed: int,
    *,
    knots=None,
    alpha_knots=None,
    x0: float = 1.0,
) -> tuple:
    """
    Learn ``beta`` from the terminal-cost problem, then ``alpha`` from the
    tracking problem whose control already uses ``beta_hat``.

    Returns
    -------
    (alpha_hat, beta_hat) : tuple of EstimateResult
    """
    params = (alpha, beta)
    sol = closed_form.general_case(alpha, beta, lam, grid)
    beta_hat = _estimate("beta", general_model(1), params, sol.policy1, beta,
                         grid, episodes, _sub_seed(seed, 1), knots, x0)
    log.info("step 1 beta_hat: %s (se %s)", beta_hat.estimates.tolist(), beta_hat.std_errors.tolist())
    # The tracking problem's optimal policy is N(alpha x, lam/2) whatever
    # beta_hat is, since its value function does not depend on x.
    plug = (alpha, beta, beta_hat.curve)
    alpha_hat = _estimate("alpha", plug_in_step2_model(), plug, sol.policy2, alpha,
                          grid, episodes, _sub_seed(seed, 2),
                          alpha_knots if alpha_knots is not None else knots, x0)
    log.info("step 2 alpha_hat: %s (se %s)", alpha_hat.estimates.tolist(), alpha_hat.std_errors.tolist())
    return alpha_hat, beta_hat


# -- policy iteration -----------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    knot_times: np.ndarray
    a1: np.ndarray
    a1_se: np.ndarray
    a2: np.ndarray
    mean_slope: np.ndarray
    variance: np.ndarray


def _value_from_knots(times, a1, a2, T, a1_T, a2_T) -> QuadraticValue:
    """Linear interpolation through the refitted knots and the terminal condition."""
    ts = np.append(times, T)
    c1 = np.append(a1, a1_T)
    c2 = np.append(a2, a2_T)
    return QuadraticValue(lambda t: np.interp(t, ts, c1), lambda t: np.interp(t, ts, c2))


def _requires_positive_a1(model: CoefficientModel) -> bool:
    return model.case is Case.DIFFUSION or (model.case is Case.GENERAL and model.step == 1)


def _eval_knot_indices(grid: TimeGrid, n_knots: int) -> np.ndarray:
    return np.unique(np.linspace(0, grid.n_steps, n_knots, endpoint=False).round().astype(int))


def _improve(model, value, spec, params, lam, times):
    policy = policy_from_value(model, value, spec, params, lam)
    try:
        slope, var = policy.mean_slope(times), policy.var(times)
    except NonIntegrableError as exc:
        raise PolicyIterationError(
            f"refitted value gives a non-convex Hamiltonian ({exc}); increase episodes"
        ) from exc
    return policy, np.asarray(slope, dtype=float), np.asarray(var, dtype=float)


def policy_iteration(
    model: CoefficientModel,
    true_params: Sequence[ParamCurve],
    lam: float,
    grid: TimeGrid,
    episodes_per_iter: int,
    n_iters: int,
    seed: int,
    *,
    init: Optional[QuadraticValue] = None,
    n_knots: int = 10,
    probes: Sequence[float] = PROBE_STATES,
):
    """
    Monte Carlo policy iteration on the quadratic ansatz.

    Each iteration evaluates the exploratory cost of the current Gaussian
    policy from every probe state at ``n_knots`` evaluation times, fits
    ``a1 x^2 + a2`` per time by least squares, interpolates, and rebuilds
    the Gibbs-optimal Gaussian policy from the fitted value.

    Parameters
    ----------
    init : QuadraticValue, optional
        Starting value; defaults to the closed-form solution.

    Returns
    -------
    value : QuadraticValue
    policy : GaussianPolicy
    trace : list of IterationRecord
        Entry 0 describes the initialization.

    Raises
    ------
    PolicyIterationError
        If a refit leaves ``a1 <= 0`` where positivity is required, or makes
        the Hamiltonian non-convex.
    """
    if not model.is_named:
        raise ContractError("policy iteration runs on the named cases")
    if n_iters < 0:
        raise ContractError(f"n_iters must be >= 0, got {n_iters}")
    true_params = tuple(true_params)
    spec = named_cost(model, lam)
    if init is None:
        init, _ = closed_form.solve(model, true_params, lam, grid)
    value = init
    idx = _eval_knot_indices(grid, n_knots)
    times = grid.nodes[idx]
    policy, slope, var = _improve(model, value, spec, true_params, lam, times)
    trace = [IterationRecord(0, times, np.asarray(value.a1(times), dtype=float),
                             np.zeros(times.size), np.asarray(value.a2(times), dtype=float),
                             slope, var)]
    probes = np.asarray(probes, dtype=float)
    design = np.column_stack([probes ** 2, np.ones_like(probes)])
    xtx_inv = np.linalg.inv(design.T @ design)
    a1_T = float(spec.final(1.0) - spec.final(0.0))
    a2_T = float(spec.final(0.0))
    x_start = np.repeat(probes, episodes_per_iter)

    for it in range(1, n_iters + 1):
        a1 = np.empty(times.size)
        a1_se = np.empty(times.size)
        a2 = np.empty(times.size)
        iter_seed = _sub_seed(seed, it)
        for j, k in enumerate(idx):
            sub = grid.tail(int(k))
            b = simulate(model, ExploratoryMean(policy), true_params, x_start, sub,
                         x_start.size, iter_seed)
            cost = pathwise_cost(b, spec, policy).reshape(probes.size, episodes_per_iter)
            means = cost.mean(axis=1)
            ses = cost.std(axis=1, ddof=1) / math.sqrt(episodes_per_iter)
            coef = xtx_inv @ design.T @ means
            # Propagate the Monte Carlo error of the probe means (independent paths).
            cov = xtx_inv @ design.T @ np.diag(ses ** 2) @ design @ xtx_inv
            a1[j], a2[j] = coef
            a1_se[j] = math.sqrt(cov[0, 0])
        if _requires_positive_a1(model) and np.any(a1 <= 0):
            bad = times[a1 <= 0]
            raise PolicyIterationError(
                f"iteration {it}: refitted a1 <= 0 at t = {bad.tolist()}; increase episodes"
            )
        value = _value_from_knots(times, a1, a2, grid.T, a1_T, a2_T)
        policy, slope, var = _improve(model, value, spec, true_params, lam, times)
        trace.append(IterationRecord(it, times, a1, a1_se, a2, slope, var))
        log.info("policy iteration %d: a1=%s slope=%s", it, a1.tolist(), slope.tolist())
    return value, policy, trace


def write_trace_csv(path, trace) -> None:
    """``iteration,knot_time,a1,a1_se,a2,mean_slope,variance`` per knot per iteration."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "knot_time", "a1", "a1_se", "a2", "mean_slope", "variance"])
        for rec in trace:
            for j in range(rec.knot_times.size):
                w.writerow([rec.iteration] + [format(float(v[j]), ".17g") for v in
                           (rec.knot_times, rec.a1, rec.a1_se, rec.a2, rec.mean_slope, rec.variance)])
