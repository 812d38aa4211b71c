"""
Coefficient models and cost functionals for the case studies.

A model couples the original controlled SDE ``dX = b dt + sigma dW`` with
the feedback substitution that turns the unknown parameter into a control
``rho``. Every coefficient takes ``(p, x, u_or_rho)`` where ``p`` is the
tuple of parameter values at the current time, in the order listed by
``param_names``. All functions are elementwise and broadcast over numpy
arrays.

Named cases
-----------
``diffusion``  b = x + u,      sigma = beta x + u,  rho replaces beta x
``drift``      b = beta x + u, sigma = x + u,       rho replaces beta x
``general``    b = alpha x + u, sigma = beta x + u; step 1 substitutes
               beta x (terminal cost), step 2 substitutes alpha x
               (tracking cost).

The substituted coefficients ``b_hat``/``sigma_hat`` are stored in their
cancelled linear form, e.g. ``(beta - 1) x - rho`` rather than
``(beta - 1 - rho / x) x``, so nothing is singular at ``x = 0``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .curves import ParamCurve
from .errors import ContractError

__all__ = [
    "Case",
    "CoefficientModel",
    "CostSpec",
    "diffusion_model",
    "drift_model",
    "general_model",
    "custom_model",
    "named_cost",
    "param_values",
]


class Case(enum.Enum):
    DIFFUSION = "diffusion"
    DRIFT = "drift"
    GENERAL = "general"
    CUSTOM = "custom"


Coef = Callable[[tuple, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoefficientModel:
    """
    Drift/diffusion pair before and after the feedback substitution.

    ``b`` and ``sigma`` act on the original control ``u``; ``control`` maps
    ``(p, x, rho)`` to the substituted input ``u^rho``; ``target`` is the
    quantity that ``rho`` stands in for, so the classical optimal feedback
    is ``control(p, x, target(p, x))``. ``b_hat``/``sigma_hat`` are the
    substituted coefficients as functions of ``rho``.
    """

    case: Case
    b_hat: Coef
    sigma_hat: Coef
    param_names: tuple = ("beta",)
    estimated: int = 0
    step: int = 1
    b: Optional[Coef] = None
    sigma: Optional[Coef] = None
    control: Optional[Coef] = None
    target: Optional[Callable[[tuple, np.ndarray], np.ndarray]] = None

    @property
    def name(self) -> str:
        if self.case is Case.GENERAL:
            return f"general-step{self.step}"
        return self.case.value

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def is_named(self) -> bool:
        return self.case is not Case.CUSTOM

    def feedback(self, p, x):
        """Classical optimal feedback ``u*``: the substituted control at the true target."""
        if self.control is None or self.target is None:
            raise ContractError(f"model '{self.name}' has no feedback structure")
        return self.control(p, x, self.target(p, x))


def param_values(params: Sequence[ParamCurve], t) -> tuple:
    """Evaluate every parameter curve at time ``t``."""
    return tuple(c(t) for c in params)


# -- diffusion-parameter case ---------------------------------------------

def _diff_b(p, x, u):
    return x + u


def _diff_sigma(p, x, u):
    (beta,) = p
    return beta * x + u


def _diff_control(p, x, rho):
    return -x - rho


def _beta_x(p, x):
    return p[-1] * x


def _diff_b_hat(p, x, rho):
    return -rho + 0.0 * x


def _diff_sigma_hat(p, x, rho):
    (beta,) = p
    return (beta - 1.0) * x - rho


def diffusion_model() -> CoefficientModel:
    return CoefficientModel(
        case=Case.DIFFUSION,
        b_hat=_diff_b_hat,
        sigma_hat=_diff_sigma_hat,
        b=_diff_b,
        sigma=_diff_sigma,
        control=_diff_control,
        target=_beta_x,
    )


# -- drift-parameter case -------------------------------------------------

def _drift_b(p, x, u):
    (beta,) = p
    return beta * x + u


def _drift_sigma(p, x, u):
    return x + u


def _drift_b_hat(p, x, rho):
    (beta,) = p
    return (beta - 1.0) * x - rho


def _drift_sigma_hat(p, x, rho):
    return -rho + 0.0 * x


def drift_model() -> CoefficientModel:
    return CoefficientModel(
        case=Case.DRIFT,
        b_hat=_drift_b_hat,
        sigma_hat=_drift_sigma_hat,
        b=_drift_b,
        sigma=_drift_sigma,
        control=_diff_control,
        target=_beta_x,
    )


# -- general case, both parameters unknown --------------------------------

def _gen_b(p, x, u):
    alpha, _ = p
    return alpha * x + u


def _gen_sigma(p, x, u):
    _, beta = p
    return beta * x + u


def _gen1_control(p, x, gamma):
    return -gamma - x


def _gen1_b_hat(p, x, gamma):
    alpha, _ = p
    return (alpha - 1.0) * x - gamma


def _gen1_sigma_hat(p, x, gamma):
    _, beta = p
    return (beta - 1.0) * x - gamma


def _gen2_control(p, x, rho):
    _, beta = p
    return -rho - beta * x


def _alpha_x(p, x):
    return p[0] * x


def _gen2_b_hat(p, x, rho):
    alpha, beta = p
    return (alpha - beta) * x - rho


def _gen2_sigma_hat(p, x, rho):
    return -rho + 0.0 * x


def general_model(step: int) -> CoefficientModel:
    """Step 1 learns ``beta`` (diffusion), step 2 learns ``alpha`` (drift)."""
    if step == 1:
        return CoefficientModel(
            case=Case.GENERAL,
            b_hat=_gen1_b_hat,
            sigma_hat=_gen1_sigma_hat,
            param_names=("alpha", "beta"),
            estimated=1,
            step=1,
            b=_gen_b,
            sigma=_gen_sigma,
            control=_gen1_control,
            target=_beta_x,
        )
    if step == 2:
        return CoefficientModel(
            case=Case.GENERAL,
            b_hat=_gen2_b_hat,
            sigma_hat=_gen2_sigma_hat,
            param_names=("alpha", "beta"),
            estimated=0,
            step=2,
            b=_gen_b,
            sigma=_gen_sigma,
            control=_gen2_control,
            target=_alpha_x,
        )
    raise ContractError(f"general case has steps 1 and 2, got {step}")


def custom_model(
    b_hat: Coef,
    sigma_hat: Coef,
    param_names: Sequence[str] = ("beta",),
    estimated: int = 0,
    **raw,
) -> CoefficientModel:
    """User-supplied substituted coefficients; ``raw`` may carry ``b``, ``sigma``, ``control``, ``target``."""
    return CoefficientModel(
        case=Case.CUSTOM,
        b_hat=b_hat,
        sigma_hat=sigma_hat,
        param_names=tuple(param_names),
        estimated=estimated,
        **raw,
    )


# -- cost functionals -----------------------------------------------------

@dataclass(frozen=True)
class CostSpec:
    """
    Running cost ``f(p, x, rho)``, terminal cost ``Phi(x)`` and temperature.

    ``f=None`` means the running cost is identically zero, so no realized
    controls are needed to evaluate it.
    """

    f: Optional[Coef]
    terminal: Optional[Callable[[np.ndarray], np.ndarray]]
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ContractError(f"temperature must be positive, got {self.lam}")

    def running(self, p, x, rho):
        if self.f is None:
            return np.zeros(np.broadcast(x, rho).shape)
        return self.f(p, x, rho)

    def final(self, x):
        if self.terminal is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.terminal(x)

    def with_lam(self, lam: float) -> "CostSpec":
        return CostSpec(self.f, self.terminal, lam)


def _square(x):
    return np.square(x)


def _track_beta(p, x, rho):
    return np.square(rho - p[-1] * x)


def _track_alpha(p, x, rho):
    return np.square(rho - p[0] * x)


def named_cost(model: CoefficientModel, lam: float) -> CostSpec:
    """Cost functional paired with each named case."""
    if model.case is Case.DIFFUSION:
        return CostSpec(None, _square, lam)
    if model.case is Case.DRIFT:
        return CostSpec(_track_beta, None, lam)
    if model.case is Case.GENERAL:
        if model.step == 1:
            return CostSpec(None, _square, lam)
        return CostSpec(_track_alpha, None, lam)
    raise ContractError("custom models carry no built-in cost; build a CostSpec directly")
