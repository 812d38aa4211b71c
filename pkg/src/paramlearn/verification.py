"""
Numerical checks of the derivations: exploratory HJB residuals, moment
matching of the randomized dynamics, the small-temperature limit, and
perturbation tests of the entropy-regularised cost.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import closed_form
from .curves import ParamCurve, TimeGrid
from .errors import ContractError
from .gibbs import (
    GaussianPolicy,
    QuadraticValue,
    density_argmax,
    gaussian_expectation,
    gaussian_reduce,
    gibbs_at,
    hamiltonian_fn,
    quadratic_coefficients,
)
from .models import Case, CoefficientModel, CostSpec, named_cost, param_values
from .sde import (
    ExploratoryMean,
    Randomized,
    evaluate_cost,
    path_equivalence,
    pathwise_cost,
    simulate,
)

__all__ = [
    "Stat",
    "VerificationReport",
    "hjb_residual",
    "reduced_hjb_residual",
    "shift_a1",
    "moment_match",
    "dirac_limit",
    "optimality_perturbation",
    "gibbs_agreement",
    "unique_minimum",
    "path_equivalence_check",
    "run_all",
    "write_reports_csv",
    "summarize",
]

Z_LEVEL = 3.0
HJB_TOL = 1e-4
HJB_DT = 1e-3


@dataclass(frozen=True)
class Stat:
    name: str
    value: float
    tolerance: float
    relation: str = "<"

    @property
    def passed(self) -> bool:
        v, tol = self.value, self.tolerance
        if not math.isfinite(v):
            return False
        return {
            "<": v < tol,
            "<=": v <= tol,
            ">": v > tol,
            ">=": v >= tol,
            "==": v == tol,
        }[self.relation]


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of one check; passes iff every statistic is within its tolerance."""

    check: str
    grid: str
    stats: tuple
    table: dict = field(default_factory=dict)
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.stats)

    def rows(self):
        for s in self.stats:
            yield (self.check, s.name, s.value, s.tolerance, s.passed)

    def summary(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        parts = [f"{s.name}={s.value:.3g} ({s.relation} {s.tolerance:.3g})" for s in self.stats]
        extra = f", skipped {self.skipped}" if self.skipped else ""
        return f"[{flag}] {self.check} on {self.grid}: " + "; ".join(parts) + extra


def write_reports_csv(path, reports: Sequence[VerificationReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "statistic", "value", "tolerance", "pass"])
        for r in reports:
            for check, name, value, tol, ok in r.rows():
                w.writerow([check, name, format(value, ".17g"), format(tol, ".17g"),
                            "true" if ok else "false"])


def summarize(reports: Sequence[VerificationReport]) -> str:
    lines = [r.summary() for r in reports]
    n_ok = sum(r.passed for r in reports)
    lines.append(f"{n_ok}/{len(reports)} checks passed")
    return "\n".join(lines)


# -- HJB residual ---------------------------------------------------------

def _all_knots(params):
    ks = [c.interior_knots for c in params]
    return np.concatenate(ks) if ks else np.empty(0)


def shift_a1(value: QuadraticValue, delta: float) -> QuadraticValue:
    """Same value function with ``a1`` shifted by ``delta``."""
    a1 = value.a1
    return QuadraticValue(lambda t: a1(t) + delta, value.a2)


def reduced_hjb_residual(model: CoefficientModel, value: QuadraticValue, params, lam, t, x, dv_dt):
    """
    HJB after substituting the Gibbs-optimal Gaussian, written per case in
    terms of ``a1 = v_xx / 2`` and the optimal mean ``mu``.
    """
    p = param_values(params, t)
    vx, vxx = value.dx(t, x), value.dxx(t)
    a1 = 0.5 * vxx
    log_pl = math.log(math.pi * lam)
    if model.case is Case.DIFFUSION:
        (beta,) = p
        a2c = (1.0 - beta) * x * vxx - vx
        mu = -a2c / (2.0 * a1)
        return dv_dt + (beta - 1.0) ** 2 * x ** 2 * a1 - mu ** 2 * a1 - 0.5 * lam * (log_pl - np.log(a1))
    if model.case is Case.DRIFT:
        (beta,) = p
        mu = (2.0 * beta * x + vx) / (2.0 + vxx)
        return (dv_dt + beta ** 2 * x ** 2 + 2.0 * (beta - 1.0) * a1 * x ** 2
                - mu ** 2 * (1.0 + a1) - 0.5 * lam * (log_pl - np.log(1.0 + a1)))
    if model.case is Case.GENERAL and model.step == 1:
        alpha, beta = p
        mu = ((beta - 1.0) * x * vxx + vx) / vxx
        return (dv_dt + (beta - 1.0) ** 2 * a1 * x ** 2 + 2.0 * (alpha - 1.0) * a1 * x ** 2
                - mu ** 2 * a1 - 0.5 * lam * (log_pl - np.log(a1)))
    if model.case is Case.GENERAL and model.step == 2:
        alpha, beta = p
        mu = (2.0 * alpha * x + vx) / (2.0 + vxx)
        return (dv_dt + alpha ** 2 * x ** 2 + 2.0 * (alpha - beta) * a1 * x ** 2
                - mu ** 2 * (1.0 + a1) - 0.5 * lam * (log_pl - np.log(1.0 + a1)))
    raise ContractError("reduced HJB forms exist only for the named cases")


def hjb_residual(
    model: CoefficientModel,
    value: QuadraticValue,
    policy: Optional[GaussianPolicy],
    params: Sequence[ParamCurve],
    lam: float,
    t_grid,
    x_grid,
    *,
    spec: Optional[CostSpec] = None,
    dt: float = HJB_DT,
    tol: float = HJB_TOL,
    check: str = "hjb_residual",
    detect: bool = False,
) -> VerificationReport:
    """
    Exploratory HJB residual
    ``d_t v + int (f + lam ln pi + sigma_hat^2 v_xx / 2 + b_hat v_x) pi``
    over a ``(t, x)`` grid.

    The control integral uses closed Gaussian moments and the entropy in
    closed form; ``d_t v`` is a central difference with step ``dt``. Nodes
    within ``2 dt`` of a parameter knot, or too close to the horizon ends,
    are skipped and counted. With ``policy=None`` the Gibbs minimiser of
    the given value is used at every node. ``detect=True`` flips the test:
    the residual must exceed ``tol`` (a wrong solution is caught).
    """
    params = tuple(params)
    spec = named_cost(model, lam) if spec is None else spec.with_lam(lam)
    knots = _all_knots(params)
    t0, T = params[0].t0, params[0].T
    X = np.asarray(x_grid, dtype=float)
    worst = 0.0
    gap = 0.0
    skipped = 0
    used = 0
    for t in np.asarray(t_grid, dtype=float):
        if t - dt < t0 or t + dt > T or (knots.size and np.min(np.abs(knots - t)) < 2.0 * dt):
            skipped += 1
            continue
        used += 1
        dv_dt = (value(t + dt, X) - value(t - dt, X)) / (2.0 * dt)
        if policy is None:
            A, B, _ = quadratic_coefficients(model, value, spec, params, t, X)
            mean, var = gaussian_reduce((A, B), lam)
        else:
            mean, var = policy.mean(t, X), np.broadcast_to(policy.var(t), X.shape)
        L = hamiltonian_fn(model, value, spec, params, t, X)
        res = dv_dt + gaussian_expectation(L, mean, var) - 0.5 * lam * np.log(2.0 * np.pi * np.e * var)
        worst = max(worst, float(np.max(np.abs(res))))
        if model.is_named:
            red = reduced_hjb_residual(model, value, params, lam, t, X, dv_dt)
            gap = max(gap, float(np.max(np.abs(red - res))))
    if used == 0:
        raise ContractError("every time node was skipped; move the grid away from knots")
    grid_desc = f"{used}x{X.size} (t,x) nodes, dt={dt:g}"
    stats = [Stat("max_abs_residual", worst, tol, ">" if detect else "<")]
    if model.is_named and not detect:
        stats.append(Stat("reduced_form_gap", gap, tol, "<"))
    return VerificationReport(check, grid_desc, tuple(stats), {"max_abs_residual": worst}, skipped)


# -- moment matching ------------------------------------------------------

def moment_match(
    model: CoefficientModel,
    params: Sequence[ParamCurve],
    policy: GaussianPolicy,
    x0: float,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    n_probes: int = 5,
    z_level: float = Z_LEVEL,
) -> VerificationReport:
    """
    Randomized-control increments against the exploratory coefficients.

    At each probe step, conditionally on ``X_k``,
    ``E[dX] / dt = b_tilde`` and ``E[dX^2] / dt = sigma_tilde^2 + E_pi[b_hat^2] dt``
    exactly under Euler-Maruyama; the z-scores test both.
    """
    if n_paths < 10_000:
        raise ContractError(f"moment matching needs n_paths >= 1e4, got {n_paths}")
    params = tuple(params)
    bundle = simulate(model, Randomized(policy), params, x0, grid, n_paths, seed)
    n, dt = grid.n_steps, grid.dt
    steps = np.unique(np.linspace(0, n - 1, n_probes).round().astype(int))
    zs = {}
    sqrt_n = math.sqrt(n_paths)

    def z_of(r):
        sd = float(np.std(r, ddof=1))
        m = float(np.mean(r))
        if sd == 0.0:
            return 0.0 if m == 0.0 else math.inf
        return m / (sd / sqrt_n)

    for k in steps:
        t = float(grid.nodes[k])
        p = param_values(params, t)
        x = bundle.states[:, k]
        dx = bundle.states[:, k + 1] - x
        mean, var = policy.mean(t, x), policy.var(t)
        b_t = gaussian_expectation(lambda r: model.b_hat(p, x, r), mean, var)
        s2 = gaussian_expectation(lambda r: np.square(model.sigma_hat(p, x, r)), mean, var)
        eb2 = gaussian_expectation(lambda r: np.square(model.b_hat(p, x, r)), mean, var)
        zs[f"drift_z@t={t:.4g}"] = z_of(dx / dt - b_t)
        zs[f"second_z@t={t:.4g}"] = z_of(dx * dx / dt - (s2 + eb2 * dt))
    worst = max(abs(z) for z in zs.values())
    stats = (Stat("max_abs_z", worst, z_level, "<="),)
    desc = f"{n_paths} paths, dt={dt:g}, {len(steps)} probe times"
    return VerificationReport(f"moment_match[{model.name}]", desc, stats, zs)


# -- small-temperature limit -----------------------------------------------

def dirac_limit(
    model: CoefficientModel,
    params: Sequence[ParamCurve],
    lams: Sequence[float],
    x: float,
    t: float,
    grid: TimeGrid,
    *,
    argmax_tol: float = 1e-6,
    ratio_tol: float = 1e-10,
) -> VerificationReport:
    """Mode fixed and variance proportional to the temperature as it shrinks."""
    lams = [float(l) for l in lams]
    if any(l <= 0 for l in lams) or any(b >= a for a, b in zip(lams, lams[1:])):
        raise ContractError("temperatures must be positive and strictly decreasing")
    params = tuple(params)
    modes, ratios = [], []
    for lam in lams:
        value, _ = closed_form.solve(model, params, lam, grid)
        spec = named_cost(model, lam)
        modes.append(density_argmax(gibbs_at(model, value, spec, params, t, x)))
        A, B, _ = quadratic_coefficients(model, value, spec, params, t, x)
        _, var = gaussian_reduce((A, B), lam)
        ratios.append(var / lam)
    drift = max(modes) - min(modes)
    rel = (max(ratios) - min(ratios)) / abs(ratios[0])
    table = {"lambda": lams, "argmax": modes, "variance_over_lambda": ratios,
             "target": float(model.target(param_values(params, t), x))}
    stats = (Stat("argmax_drift", drift, argmax_tol), Stat("variance_ratio_rel_spread", rel, ratio_tol))
    return VerificationReport(f"dirac_limit[{model.name}]", f"t={t:g}, x={x:g}", stats, table)


# -- cost perturbations ---------------------------------------------------

DEFAULT_SLOPE_OFFSETS = (-0.1, -0.05, 0.05, 0.1)
DEFAULT_VAR_MULTS = (0.5, 2.0)


def optimality_perturbation(
    model: CoefficientModel,
    params: Sequence[ParamCurve],
    lam: float,
    x0: float,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    slope_offsets: Sequence[float] = DEFAULT_SLOPE_OFFSETS,
    var_mults: Sequence[float] = DEFAULT_VAR_MULTS,
    z_level: float = Z_LEVEL,
    min_paths: int = 100_000,
) -> VerificationReport:
    """
    Entropy-regularised cost of the optimal policy against perturbed ones.

    Every policy runs the exploratory dynamics on the same Brownian
    increments; a perturbation passes if its cost is at least the optimal
    cost minus ``z_level`` pooled standard errors.
    """
    if n_paths < min_paths:
        raise ContractError(f"perturbation tests need n_paths >= {min_paths}, got {n_paths}")
    params = tuple(params)
    _, best = closed_form.solve(model, params, lam, grid)
    spec = named_cost(model, lam)

    def costs(policy):
        b = simulate(model, ExploratoryMean(policy), params, x0, grid, n_paths, seed)
        return pathwise_cost(b, spec, policy)

    c0 = costs(best)
    se0 = float(c0.std(ddof=1) / math.sqrt(n_paths))
    stats, table = [], {"optimal_cost": float(c0.mean()), "optimal_se": se0}
    perturbations = [(f"slope{d:+g}", d, 1.0) for d in slope_offsets]
    perturbations += [(f"var_x{m:g}", 0.0, m) for m in var_mults]
    for name, d, m in perturbations:
        c = costs(best.perturbed(d, m))
        se = float(c.std(ddof=1) / math.sqrt(n_paths))
        diff = float(c.mean() - c0.mean())
        pooled = math.sqrt(se0 ** 2 + se ** 2)
        paired = float((c - c0).std(ddof=1) / math.sqrt(n_paths))
        table[name] = {"cost_increase": diff, "pooled_se": pooled, "paired_se": paired}
        stats.append(Stat(f"{name}_cost_increase", diff, -z_level * pooled, ">="))
    desc = f"{n_paths} paths, {grid.describe()}, common random numbers"
    return VerificationReport(f"optimality_perturbation[{model.name}]", desc, tuple(stats), table)


# -- closed form against the grid Gibbs density --------------------------

def gibbs_agreement(model, value, policy, params, lam, t, x, *, m=2001, tol=1e-6) -> VerificationReport:
    """Sup-norm gap between the tabulated Gibbs density and the closed-form Gaussian."""
    spec = named_cost(model, lam)
    d = gibbs_at(model, value, spec, tuple(params), t, x, m=m)
    gap = float(np.max(np.abs(d.density - policy.pdf(t, x, d.rho))))
    stats = (Stat("sup_norm_gap", gap, tol),)
    return VerificationReport(f"gibbs_agreement[{model.name}]",
                              f"{m} points on [{d.rho[0]:.4g}, {d.rho[-1]:.4g}] at t={t:g}, x={x:g}",
                              stats, {"argmax": density_argmax(d)})


def unique_minimum(model, value, params, lam, t_grid, x_grid, *, offsets=None) -> VerificationReport:
    """
    Strict-minimum condition: ``L(rho) > L(rho*)`` for every probed
    ``rho != rho*``, where ``rho*`` is the quantity the control replaces.
    """
    spec = named_cost(model, lam)
    params = tuple(params)
    if offsets is None:
        offsets = np.linspace(-3.0, 3.0, 121)
    offsets = np.asarray(offsets, dtype=float)
    offsets = offsets[offsets != 0.0]
    violations = 0
    total = 0
    for t in np.asarray(t_grid, dtype=float):
        p = param_values(params, t)
        for x in np.asarray(x_grid, dtype=float):
            L = hamiltonian_fn(model, value, spec, params, t, x)
            star = float(model.target(p, x))
            l_star = float(L(star))
            diff = L(star + offsets) - l_star
            violations += int(np.sum(diff <= 1e-12 * max(1.0, abs(l_star))))
            total += offsets.size
    stats = (Stat("violations", float(violations), 0.0, "=="),)
    return VerificationReport(f"unique_minimum[{model.name}]",
                              f"{len(t_grid)}x{len(x_grid)} (t,x) nodes, {offsets.size} controls",
                              stats, {"probes": total})


def path_equivalence_check(model, params, x0, grid, n_paths, seed) -> VerificationReport:
    gap = path_equivalence(model, params, x0, grid, n_paths, seed)
    return VerificationReport(f"path_equivalence[{model.name}]", f"{n_paths} paths, {grid.describe()}",
                              (Stat("max_abs_diff", gap, 0.0, "=="),))


# -- full matrix ----------------------------------------------------------

def default_hjb_grids(t0: float, T: float, dt: float = HJB_DT, n: int = 50):
    return np.linspace(t0 + 2.0 * dt, T - 2.0 * dt, n), np.linspace(-2.0, 2.0, n)


def run_all(
    model: CoefficientModel,
    params: Sequence[ParamCurve],
    lam: float,
    grid: TimeGrid,
    x0: float,
    n_paths: int,
    seed: int,
    *,
    perturbation_paths: Optional[int] = None,
    lams: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
) -> list:
    """Every check for one named model at its closed-form solution."""
    params = tuple(params)
    value, policy = closed_form.solve(model, params, lam, grid)
    tg, xg = default_hjb_grids(grid.t0, grid.T)
    reports = [
        gibbs_agreement(model, value, policy, params, lam, grid.t0, x0),
        hjb_residual(model, value, policy, params, lam, tg, xg),
        hjb_residual(model, shift_a1(value, 0.1), None, params, lam, tg, xg,
                     tol=1e-2, detect=True, check="hjb_perturbation_detected"),
        unique_minimum(model, value, params, lam, tg[::5], xg[::5]),
        path_equivalence_check(model, params, x0, grid, 100, seed),
        moment_match(model, params, policy, x0, grid, n_paths, seed),
        dirac_limit(model, params, lams, x0, grid.t0, grid),
        optimality_perturbation(model, params, lam, x0, grid,
                                perturbation_paths or max(n_paths, 100_000), seed),
    ]
    # Prefix each check with the model name where it is not already tagged.
    out = []
    for r in reports:
        name = r.check if "[" in r.check else f"{r.check}[{model.name}]"
        out.append(VerificationReport(name, r.grid, r.stats, r.table, r.skipped))
    return out
