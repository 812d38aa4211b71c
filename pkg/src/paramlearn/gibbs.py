"""
Exploratory HJB optimal densities.

For a value function ``v`` the exploratory HJB is minimised pointwise by
the Gibbs density ``pi(rho) ~ exp(-L(rho) / lam)`` with Hamiltonian

    L(t, x, rho) = f(x, rho) + 0.5 * sigma_hat^2 * v_xx + b_hat * v_x.

This module evaluates ``L``, builds the Gibbs density on a control grid
(log-sum-exp normalised, trapezoidal cell weights), reduces it to a
Gaussian when ``L`` is quadratic in ``rho``, locates its mode, samples from
it, and provides the closed Gaussian moments used by the exploratory
dynamics and the entropy-regularised cost.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .curves import ParamCurve
from .errors import ContractError, GibbsRangeError, NonIntegrableError
from .models import CoefficientModel, CostSpec, param_values

__all__ = [
    "QuadraticValue",
    "GaussianPolicy",
    "GibbsDensity",
    "hamiltonian",
    "hamiltonian_fn",
    "quadratic_coefficients",
    "gaussian_reduce",
    "gibbs_density",
    "default_rho_range",
    "gibbs_at",
    "density_argmax",
    "density_sample",
    "entropy_term",
    "first_order_residual",
    "gaussian_expectation",
    "exploratory_coefficients",
    "policy_from_value",
]

TimeFn = Callable[[np.ndarray], np.ndarray]

_HERMITE_ORDER = 5
_HERM_Z, _HERM_W = np.polynomial.hermite_e.hermegauss(_HERMITE_ORDER)
_HERM_W = _HERM_W / math.sqrt(2.0 * math.pi)


def _zero(t):
    return np.zeros_like(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class QuadraticValue:
    """Value-function ansatz ``v(t, x) = a1(t) x^2 + a2(t)``."""

    a1: TimeFn
    a2: TimeFn = _zero

    def __call__(self, t, x):
        return self.a1(t) * np.square(x) + self.a2(t)

    def dx(self, t, x):
        return 2.0 * self.a1(t) * x

    def dxx(self, t):
        return 2.0 * np.asarray(self.a1(t), dtype=float)


@dataclass(frozen=True)
class GaussianPolicy:
    """Feedback Gaussian ``pi_t = N(mean_slope(t) * x, variance(t))``."""

    mean_slope: TimeFn
    variance: TimeFn

    def mean(self, t, x):
        return self.mean_slope(t) * x

    def var(self, t):
        v = np.asarray(self.variance(t), dtype=float)
        if np.any(~(v > 0)):
            raise ContractError("policy variance must be positive")
        return v

    def pdf(self, t, x, rho):
        v = self.var(t)
        return np.exp(-np.square(rho - self.mean(t, x)) / (2.0 * v)) / np.sqrt(2.0 * np.pi * v)

    def perturbed(self, slope_offset: float = 0.0, var_mult: float = 1.0) -> "GaussianPolicy":
        slope, var = self.mean_slope, self.variance
        if slope_offset == 0.0 and var_mult == 1.0:
            return self
        return GaussianPolicy(
            lambda t: slope(t) + slope_offset,
            lambda t: var_mult * np.asarray(var(t), dtype=float),
        )


# -- Hamiltonian ----------------------------------------------------------

def _hamiltonian(model, spec, p, vx, vxx, x, rho):
    s = model.sigma_hat(p, x, rho)
    return spec.running(p, x, rho) + 0.5 * s * s * vxx + model.b_hat(p, x, rho) * vx


def hamiltonian(model: CoefficientModel, value: QuadraticValue, spec: CostSpec,
                params: Sequence[ParamCurve], t, x, rho):
    """``L(t, x, rho) = f + sigma_hat^2 v_xx / 2 + b_hat v_x``."""
    p = param_values(params, t)
    return _hamiltonian(model, spec, p, value.dx(t, x), value.dxx(t), x, rho)


def hamiltonian_fn(model, value, spec, params, t, x) -> Callable[[np.ndarray], np.ndarray]:
    """Freeze ``(t, x)`` and return ``L`` as a function of the control."""
    p = param_values(params, t)
    vx, vxx = value.dx(t, x), value.dxx(t)
    return lambda rho: _hamiltonian(model, spec, p, vx, vxx, x, rho)


def quadratic_coefficients(model, value, spec, params, t, x):
    """
    Coefficients ``(A, B, C)`` of ``L = A rho^2 + B rho + C``.

    Read off from three evaluations, which is exact for the named cases
    where ``L`` is a quadratic in the control.
    """
    L = hamiltonian_fn(model, value, spec, params, t, x)
    lm, l0, lp = L(-1.0), L(0.0), L(1.0)
    return 0.5 * (lp + lm) - l0, 0.5 * (lp - lm), l0


def gaussian_reduce(quad, lam):
    """
    Mean and variance of ``exp(-(A rho^2 + B rho + C) / lam)``.

    Parameters
    ----------
    quad : tuple
        ``(A, B, C)`` or ``(A, B)``; arrays broadcast.
    lam : float
        Temperature.

    Returns
    -------
    mean, variance
        ``-B / (2A)`` and ``lam / (2A)``.

    Raises
    ------
    NonIntegrableError
        If ``A <= 0`` anywhere.
    """
    A = np.asarray(quad[0], dtype=float)
    B = np.asarray(quad[1], dtype=float)
    if not lam > 0:
        raise ContractError(f"temperature must be positive, got {lam}")
    if np.any(~(A > 0)):
        raise NonIntegrableError(
            "Hamiltonian is not strictly convex in the control (A <= 0); "
            "the Gibbs weight is not integrable"
        )
    mean = -B / (2.0 * A)
    var = lam / (2.0 * A)
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


# -- grid Gibbs density ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class GibbsDensity:
    """
    Gibbs density tabulated on a uniform control grid.

    ``log_weights`` is ``-L / lam`` shifted so its maximum is 0 (the shift is
    kept in ``log_shift``), which keeps the density accurate however large
    ``L / lam`` is; ``log_z`` is the log normaliser of the shifted weights.
    """

    rho: np.ndarray
    log_weights: np.ndarray
    log_z: float
    log_shift: float = 0.0

    @property
    def h(self) -> float:
        return float(self.rho[1] - self.rho[0])

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_z)

    @property
    def normalizer(self) -> float:
        """``Z = int exp(-L / lam)``; may overflow to ``inf`` for tiny temperatures."""
        try:
            return math.exp(self.log_z + self.log_shift)
        except OverflowError:
            return math.inf

    @property
    def cell_weights(self) -> np.ndarray:
        w = np.full(self.rho.size, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def mass(self) -> float:
        return float(np.sum(self.cell_weights * self.density))

    @property
    def tails_resolved(self) -> bool:
        p = self.density
        return bool(max(p[0], p[-1]) < 1e-12 * p.max())

    def mean(self) -> float:
        return float(np.sum(self.cell_weights * self.density * self.rho))

    def variance(self) -> float:
        m = self.mean()
        return float(np.sum(self.cell_weights * self.density * np.square(self.rho - m)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rho", "density"])
            for r, d in zip(self.rho, self.density):
                w.writerow([format(r, ".17g"), format(d, ".17g")])


def _uniform_grid(lo, hi, m):
    h = (hi - lo) / (m - 1)
    rho = lo + h * np.arange(m)
    rho[-1] = hi
    return rho


def gibbs_density(L: Callable[[np.ndarray], np.ndarray], lam: float,
                  rho_range: tuple, m: int = 2001) -> GibbsDensity:
    """Tabulate ``exp(-L / lam)`` on ``m`` points and normalise with log-sum-exp."""
    if not lam > 0:
        raise ContractError(f"temperature must be positive, got {lam}")
    if m < 3:
        raise ContractError(f"need at least 3 grid points, got {m}")
    lo, hi = map(float, rho_range)
    if not hi > lo:
        raise ContractError(f"empty control range [{lo}, {hi}]")
    rho = _uniform_grid(lo, hi, m)
    vals = np.broadcast_to(np.asarray(L(rho), dtype=float), rho.shape)
    if np.any(np.isnan(vals)):
        raise GibbsRangeError("Hamiltonian returned NaN on the control grid")
    logw = -vals / lam
    finite = np.isfinite(logw)
    if not finite.any():
        raise GibbsRangeError(
            "all Gibbs weights underflow on the control grid; widen the range "
            "or centre it on the Hamiltonian minimiser"
        )
    logw = np.where(finite, logw, -np.inf)
    top = logw.max()
    h = rho[1] - rho[0]
    cw = np.full(m, h)
    cw[0] = cw[-1] = 0.5 * h
    logw = logw - top
    log_z = math.log(float(np.sum(cw * np.exp(logw))))
    rho.setflags(write=False)
    logw.setflags(write=False)
    return GibbsDensity(rho, logw, log_z, float(top))


def default_rho_range(L, lam: float, hint: float = 0.0, width: float = 8.0) -> tuple:
    """
    Grid centred on the minimiser of ``L`` found by golden-section search.

    The half-width is ``width`` local standard deviations,
    ``sqrt(lam / (2 A_loc))`` with ``A_loc`` from a second difference.
    """
    res = minimize_scalar(lambda r: float(L(np.float64(r))), method="golden",
                          bracket=(hint - 1.0, hint + 1.0))
    c = float(res.x)
    step = 1e-3 * max(1.0, abs(c))
    a_loc = (float(L(c + step)) - 2.0 * float(L(c)) + float(L(c - step))) / (2.0 * step * step)
    if not a_loc > 0:
        raise NonIntegrableError(f"Hamiltonian has non-positive curvature {a_loc:g} at its minimiser")
    half = width * math.sqrt(lam / (2.0 * a_loc))
    return c - half, c + half


def gibbs_at(model, value, spec, params, t, x, *, lam=None, m=2001,
             rho_range: Optional[tuple] = None) -> GibbsDensity:
    """Gibbs density of the model Hamiltonian at one ``(t, x)``."""
    lam = spec.lam if lam is None else lam
    L = hamiltonian_fn(model, value, spec, params, t, x)
    if rho_range is None:
        hint = 0.0
        if model.target is not None:
            hint = float(model.target(param_values(params, t), x))
        rho_range = default_rho_range(L, lam, hint=hint)
    return gibbs_density(L, lam, rho_range, m)


def density_argmax(d: GibbsDensity) -> float:
    """
    Mode of a tabulated density.

    Grid argmax (first occurrence, so ties go to the smallest control)
    refined by the vertex of the parabola through the log-density at the
    three surrounding nodes; exact for Gaussian densities.
    """
    lw = d.log_weights
    j = int(np.argmax(lw))
    if j == 0 or j == lw.size - 1:
        raise GibbsRangeError(
            f"density peaks at the grid boundary rho={d.rho[j]:g}; widen the control range"
        )
    y0, y1, y2 = lw[j - 1], lw[j], lw[j + 1]
    curv = y0 - 2.0 * y1 + y2
    if not curv < 0:
        return float(d.rho[j])
    return float(d.rho[j] + 0.5 * (y0 - y2) / curv * d.h)


def density_sample(d: GibbsDensity, n: int, seed: int) -> np.ndarray:
    """Inverse-CDF draws using the trapezoidal CDF, linear inside each cell."""
    if n < 1:
        raise ContractError(f"need n >= 1 samples, got {n}")
    p = d.density
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * d.h * (p[1:] + p[:-1]))])
    cdf /= cdf[-1]
    u = np.random.Generator(np.random.Philox(seed)).random(n)
    return np.interp(u, cdf, d.rho)


def entropy_term(policy: GaussianPolicy, t):
    """``int pi ln pi`` for the Gaussian policy at time ``t`` (negative differential entropy)."""
    return -0.5 * np.log(2.0 * np.pi * np.e * policy.var(t))


def first_order_residual(model, value, spec, params, t, x, rho) -> float:
    """
    First-order condition ``d_rho f + sigma_hat d_rho sigma_hat v_xx + d_rho b_hat v_x``.

    Derivatives in the control are central differences with step
    ``1e-6 * max(1, |rho|)``, so custom models need not expose them.
    """
    p = param_values(params, t)
    vx, vxx = value.dx(t, x), value.dxx(t)
    h = 1e-6 * max(1.0, abs(rho))

    def d(fn):
        return (fn(p, x, rho + h) - fn(p, x, rho - h)) / (2.0 * h)

    df = d(spec.running) if spec.f is not None else 0.0
    return float(df + model.sigma_hat(p, x, rho) * d(model.sigma_hat) * vxx
                 + d(model.b_hat) * vx)


# -- closed Gaussian moments ---------------------------------------------

def gaussian_expectation(g: Callable[[np.ndarray], np.ndarray], mean, var):
    """
    ``E[g(rho)]`` for ``rho ~ N(mean, var)`` by Gauss-Hermite quadrature.

    Exact for polynomials of degree below ten, which covers every named
    case (all integrands are quadratic in the control).
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.asarray(var, dtype=float))
    shape = (-1,) + (1,) * max(mean.ndim, sd.ndim)
    z = _HERM_Z.reshape(shape)
    w = _HERM_W.reshape(shape)
    return np.sum(w * g(mean + sd * z), axis=0)


def exploratory_coefficients(model, p, x, mean, var):
    """Exploratory drift ``E_pi b_hat`` and (positive-root) diffusion ``sqrt(E_pi sigma_hat^2)``."""
    b_t = gaussian_expectation(lambda r: model.b_hat(p, x, r), mean, var)
    s2 = gaussian_expectation(lambda r: np.square(model.sigma_hat(p, x, r)), mean, var)
    return b_t, np.sqrt(np.maximum(s2, 0.0))


def policy_from_value(model, value, spec, params, lam=None) -> GaussianPolicy:
    """
    Gibbs-optimal Gaussian policy induced by a quadratic value function.

    Assumes ``L`` has an ``x``-free quadratic coefficient and a linear
    coefficient proportional to ``x``, as in every named case; the slope
    is read off at ``x = 1``.
    """
    lam = spec.lam if lam is None else lam

    def reduce(t):
        A, B, _ = quadratic_coefficients(model, value, spec, params, t, 1.0)
        return gaussian_reduce((A, B), lam)

    return GaussianPolicy(lambda t: reduce(t)[0], lambda t: reduce(t)[1])
