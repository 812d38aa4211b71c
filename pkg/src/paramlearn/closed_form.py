"""
Exact solutions of the exploratory HJB for the linear case studies.

With ``v = a1(t) x^2 + a2(t)`` the HJB splits into a linear ODE for
``a1`` (solved exactly through the step-function integral) and a
quadrature for ``a2``:

    a1' + r(t) a1 = 0,                 a1(T) = 1  =>  a1 = exp(int_t^T r)
    a2' = (lam / 2) ln(pi lam / a1),   a2(T) = 0  =>  a2 = -int_t^T (lam/2) ln(pi lam / a1)

with ``r = 1 - 2 beta`` (diffusion case) or ``2 (alpha - beta) - 1``
(general case, step 1). The tracking-cost problems (drift case and
general step 2) have ``a1 = 0`` and ``a2 = -(lam/2)(T - t) ln(pi lam)``.
Here ``pi`` is the circle constant.
"""

from __future__ import annotations

import csv
import math
from typing import NamedTuple, Sequence

import numpy as np

from .curves import ParamCurve, TimeGrid, exp_integral
from .errors import ContractError
from .gibbs import GaussianPolicy, QuadraticValue
from .models import Case, CoefficientModel

__all__ = [
    "GeneralSolution",
    "diffusion_case",
    "drift_case",
    "general_case",
    "classical_solution",
    "solve",
    "export_curves",
]


class GeneralSolution(NamedTuple):
    value1: QuadraticValue
    policy1: GaussianPolicy
    policy2: GaussianPolicy
    value2: QuadraticValue


def _check_lam(lam):
    if not (np.isfinite(lam) and lam > 0):
        raise ContractError(f"temperature must be positive, got {lam}")


class _TailIntegral:
    """
    ``I(t) = int_t^T g(s) ds`` by composite Simpson.

    Panel boundaries are the grid nodes plus the curve knots, so the
    integrand is smooth inside every panel.
    """

    def __init__(self, g, grid: TimeGrid, knots):
        b = np.unique(np.concatenate([grid.nodes, np.asarray(knots, dtype=float)]))
        b = b[(b >= grid.t0) & (b <= grid.T)]
        self._g = g
        self._b = b
        panels = self._simpson(b[:-1], b[1:])
        self._suffix = np.concatenate([np.cumsum(panels[::-1])[::-1], [0.0]])

    def _simpson(self, lo, hi):
        mid = 0.5 * (lo + hi)
        return (hi - lo) / 6.0 * (self._g(lo) + 4.0 * self._g(mid) + self._g(hi))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        i = np.clip(np.searchsorted(self._b, t, side="right") - 1, 0, self._b.size - 2)
        nxt = self._b[i + 1]
        out = self._simpson(t, nxt) + self._suffix[i + 1]
        return float(out) if out.ndim == 0 else out


def _entropic_a2(rate: ParamCurve, lam: float, grid: TimeGrid):
    """``a2(t) = -int_t^T (lam/2) ln(pi lam / a1(s)) ds`` with ``ln a1(s) = int_s^T rate``."""
    log_pl = math.log(math.pi * lam)
    T = rate.T

    def g(s):
        s = np.asarray(s, dtype=float)
        return 0.5 * lam * (log_pl - rate.integral(s, np.full(s.shape, T)))

    tail = _TailIntegral(g, grid, rate.knots)
    return lambda t: -tail(t)


def _tracking_a2(lam: float, T: float):
    c = 0.5 * lam * math.log(math.pi * lam)
    return lambda t: -c * (T - np.asarray(t, dtype=float))


def _zero(t):
    return np.zeros_like(np.asarray(t, dtype=float))


def _exp_curve(rate: ParamCurve):
    return lambda t: exp_integral(rate, t)


def diffusion_case(beta: ParamCurve, lam: float, grid: TimeGrid):
    """Value and optimal policy ``N(beta x, lam / (2 alpha1))`` when ``beta`` sits in the diffusion."""
    _check_lam(lam)
    rate = 1.0 - 2.0 * beta
    a1 = _exp_curve(rate)
    value = QuadraticValue(a1, _entropic_a2(rate, lam, grid))
    policy = GaussianPolicy(beta, lambda t: lam / (2.0 * a1(t)))
    return value, policy


def drift_case(beta: ParamCurve, lam: float, grid: TimeGrid):
    """Value and optimal policy ``N(beta x, lam / 2)`` when ``beta`` sits in the drift."""
    _check_lam(lam)
    value = QuadraticValue(_zero, _tracking_a2(lam, beta.T))
    policy = GaussianPolicy(beta, lambda t: np.full(np.shape(t), 0.5 * lam))
    return value, policy


def general_case(alpha: ParamCurve, beta: ParamCurve, lam: float, grid: TimeGrid) -> GeneralSolution:
    """Both steps of the two-parameter problem: ``N(beta x, lam/(2 theta1))`` then ``N(alpha x, lam/2)``."""
    _check_lam(lam)
    rate = 2.0 * (alpha - beta) - 1.0
    theta1 = _exp_curve(rate)
    value1 = QuadraticValue(theta1, _entropic_a2(rate, lam, grid))
    policy1 = GaussianPolicy(beta, lambda t: lam / (2.0 * theta1(t)))
    policy2 = GaussianPolicy(alpha, lambda t: np.full(np.shape(t), 0.5 * lam))
    value2 = QuadraticValue(_zero, _tracking_a2(lam, alpha.T))
    return GeneralSolution(value1, policy1, policy2, value2)


def classical_solution(beta: ParamCurve, grid: TimeGrid):
    """
    Unexplored problem of the diffusion case.

    Returns the value ``b1(t) x^2`` with ``b1 = exp(int_t^T (1 - 2 beta))``
    and the optimal feedback ``rho*(t, x) = beta_t x``.
    """
    value = QuadraticValue(_exp_curve(1.0 - 2.0 * beta), _zero)

    def feedback(t, x):
        return beta(t) * x

    return value, feedback


def solve(model: CoefficientModel, params: Sequence[ParamCurve], lam: float, grid: TimeGrid):
    """Closed-form ``(value, policy)`` for any named model."""
    if model.case is Case.DIFFUSION:
        return diffusion_case(params[0], lam, grid)
    if model.case is Case.DRIFT:
        return drift_case(params[0], lam, grid)
    if model.case is Case.GENERAL:
        sol = general_case(params[0], params[1], lam, grid)
        if model.step == 1:
            return sol.value1, sol.policy1
        return sol.value2, sol.policy2
    raise ContractError("custom models have no closed form; use the grid Gibbs density")


def export_curves(path, grid: TimeGrid, value: QuadraticValue, policy: GaussianPolicy,
                  names=("alpha1", "alpha2")) -> None:
    """Write ``t,<a1>,<a2>,mean_slope,variance`` at every grid node."""
    t = grid.nodes
    cols = [t, value.a1(t), value.a2(t), policy.mean_slope(t), policy.var(t)]
    cols = [np.broadcast_to(np.asarray(c, dtype=float), t.shape) for c in cols]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", names[0], names[1], "mean_slope", "variance"])
        for row in zip(*cols):
            w.writerow([format(v, ".17g") for v in row])
