"""
Learning unknown SDE coefficients through entropy-regularised exploratory
control.

The unknown parameter is substituted by a control inside the optimal
feedback; the Gibbs-optimal randomized policy of the resulting exploratory
problem then concentrates at the true parameter. The package provides the
models, an Euler-Maruyama simulator, Gibbs densities, closed-form
solutions for the linear case studies, numerical verification and
estimators.
"""

__version__ = "0.1.0"

from .curves import ParamCurve, TimeGrid, curve_eval, curve_integral, exp_integral
from .errors import (
    ConfigError,
    ContractError,
    DegenerateRegressorError,
    DomainError,
    GibbsRangeError,
    NonIntegrableError,
    ParamLearnError,
    PolicyIterationError,
    SimulationError,
)
from .models import (
    Case,
    CoefficientModel,
    CostSpec,
    custom_model,
    diffusion_model,
    drift_model,
    general_model,
    named_cost,
)
from .gibbs import (
    GaussianPolicy,
    GibbsDensity,
    QuadraticValue,
    density_argmax,
    density_sample,
    gaussian_reduce,
    gibbs_at,
    gibbs_density,
    hamiltonian,
)
from .sde import (
    ExploratoryMean,
    Feedback,
    PathBundle,
    Randomized,
    SubstitutedCurve,
    evaluate_cost,
    path_equivalence,
    pathwise_cost,
    simulate,
)
from .closed_form import classical_solution, diffusion_case, drift_case, general_case, solve
from .learner import (
    EstimateResult,
    SampleBatch,
    estimate_beta,
    fit_mean_slope,
    policy_iteration,
    two_step_estimate,
)
from .verification import VerificationReport, run_all

__all__ = [name for name in dir() if not name.startswith("_")]
