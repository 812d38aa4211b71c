"""
Euler-Maruyama simulation of the classical, substituted, randomized and
exploratory dynamics, plus Monte Carlo evaluation of the cost functionals.

Random numbers come from counter-based Philox streams keyed by
``(seed, stream, block)`` where a block is a fixed run of ``BLOCK`` paths.
Workers own whole blocks and write disjoint row slices, so a bundle is a
deterministic function of ``(seed, n_paths, grid)`` whatever the number of
worker threads. The worker count is read from ``PARAMLEARN_THREADS``.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .curves import ParamCurve, TimeGrid
from .errors import ContractError, SimulationError
from .gibbs import GaussianPolicy, entropy_term, exploratory_coefficients, gaussian_expectation
from .models import CoefficientModel, CostSpec, param_values

__all__ = [
    "BLOCK",
    "Feedback",
    "SubstitutedCurve",
    "Randomized",
    "ExploratoryMean",
    "PathBundle",
    "normal_block_matrix",
    "simulate",
    "pathwise_cost",
    "evaluate_cost",
    "path_equivalence",
    "worker_count",
]

BLOCK = 512
NOISE_STREAM = 0
CONTROL_STREAM = 1

THREADS_ENV = "PARAMLEARN_THREADS"


def worker_count() -> int:
    """Threads for path simulation: ``PARAMLEARN_THREADS`` or the CPU count (at most 8)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return max(1, min(8, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError:
        raise ContractError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


# -- control laws ---------------------------------------------------------

@dataclass(frozen=True)
class Feedback:
    """Classical control ``u(t, x)`` fed into the original coefficients ``b``, ``sigma``."""

    u: Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SubstitutedCurve:
    """
    Deterministic substituted control.

    ``rho`` is a :class:`ParamCurve` or a callable ``rho(t, x)``; the
    latter covers the state-proportional optimum ``rho = beta_t x``.
    """

    rho: Union[ParamCurve, Callable[[float, np.ndarray], np.ndarray]]

    def __call__(self, t, x):
        if isinstance(self.rho, ParamCurve):
            return np.full(np.shape(x), self.rho(t))
        return np.broadcast_to(self.rho(t, x), np.shape(x))


@dataclass(frozen=True)
class Randomized:
    """A fresh ``rho ~ pi_t(. | x)`` drawn per path per step."""

    policy: GaussianPolicy


@dataclass(frozen=True)
class ExploratoryMean:
    """Exploratory SDE with ``pi``-averaged drift and root-mean-square diffusion."""

    policy: GaussianPolicy


ControlLaw = Union[Feedback, SubstitutedCurve, Randomized, ExploratoryMean]


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Simulated paths with the Brownian increments and realized controls that drove them."""

    grid: TimeGrid
    states: np.ndarray
    noise: np.ndarray
    controls: Optional[np.ndarray]
    seed: int
    params: tuple = ()

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def x0(self) -> float:
        return float(self.states[0, 0])

    def to_csv(self, path) -> None:
        """One row per ``(path, step)``: ``path,step,time,state[,control]``."""
        t = self.grid.nodes
        n = self.grid.n_steps
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["path", "step", "time", "state"]
            if self.controls is not None:
                header.append("control")
            w.writerow(header)
            ts = [format(v, ".17g") for v in t]
            for i in range(self.n_paths):
                xs = self.states[i]
                us = self.controls[i] if self.controls is not None else None
                for k in range(n + 1):
                    row = [i, k, ts[k], format(xs[k], ".17g")]
                    if us is not None:
                        row.append(format(us[k], ".17g") if k < n else "")
                    w.writerow(row)


# -- random streams -------------------------------------------------------

def _block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(stream), int(block)])
    return np.random.Generator(np.random.Philox(ss))


def normal_block_matrix(seed: int, stream: int, start: int, stop: int, n_cols: int) -> np.ndarray:
    """
    Standard normals for rows ``start..stop-1``.

    Row ``i`` always comes from block ``i // BLOCK`` of the stream, so any
    partition of the rows reproduces the same numbers.
    """
    if seed < 0:
        raise ContractError(f"seed must be non-negative, got {seed}")
    out = np.empty((stop - start, n_cols))
    b0, b1 = start // BLOCK, (stop - 1) // BLOCK
    for b in range(b0, b1 + 1):
        z = _block_generator(seed, stream, b).standard_normal((BLOCK, n_cols))
        lo = max(start, b * BLOCK)
        hi = min(stop, (b + 1) * BLOCK)
        out[lo - start:hi - start] = z[lo - b * BLOCK:hi - b * BLOCK]
    return out


def _chunks(n_paths: int, workers: int):
    n_blocks = -(-n_paths // BLOCK)
    per = -(-n_blocks // workers)
    out = []
    for w in range(workers):
        lo = w * per * BLOCK
        hi = min(n_paths, (w + 1) * per * BLOCK)
        if lo < hi:
            out.append((lo, hi))
    return out


# -- simulation -----------------------------------------------------------

def _as_params(params) -> tuple:
    if isinstance(params, ParamCurve):
        return (params,)
    return tuple(params)


def _check_consistent(model, law, params, grid):
    if len(params) != model.n_params:
        raise ContractError(
            f"model '{model.name}' takes {model.n_params} parameter curve(s), got {len(params)}"
        )
    for c in params:
        if c.t0 > grid.t0 + 1e-12 or c.T < grid.T - 1e-12:
            raise ContractError("parameter curves do not cover the simulation grid")
    if isinstance(law, Feedback) and (model.b is None or model.sigma is None):
        raise ContractError(f"model '{model.name}' has no original coefficients for a feedback law")


def simulate(
    model: CoefficientModel,
    law: ControlLaw,
    params: Union[ParamCurve, Sequence[ParamCurve]],
    x0,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    coefficients: str = "cancelled",
    workers: Optional[int] = None,
) -> PathBundle:
    """
    Euler-Maruyama ``X_{k+1} = X_k + drift dt + diffusion dW_k``.

    Parameters
    ----------
    model : CoefficientModel
    law : Feedback, SubstitutedCurve, Randomized or ExploratoryMean
    params : ParamCurve or sequence of ParamCurve
        True parameter curves, in ``model.param_names`` order.
    x0 : float or array of shape (n_paths,)
        Initial state, common or per path.
    grid : TimeGrid
    n_paths : int
    seed : int
        Non-negative; keys the counter-based streams.
    coefficients : {"cancelled", "composed"}
        For substituted laws, use the cancelled closed forms ``b_hat``,
        ``sigma_hat`` or the definition ``b(p, x, control(p, x, rho))``.
    workers : int, optional
        Thread count; defaults to ``PARAMLEARN_THREADS``.

    Returns
    -------
    PathBundle
        Controls are recorded for substituted and randomized laws.
    """
    params = _as_params(params)
    if n_paths < 1:
        raise ContractError(f"n_paths must be >= 1, got {n_paths}")
    if coefficients not in ("cancelled", "composed"):
        raise ContractError(f"unknown coefficient form {coefficients!r}")
    _check_consistent(model, law, params, grid)
    if coefficients == "composed" and (model.control is None or model.b is None):
        raise ContractError(f"model '{model.name}' cannot compose the substituted coefficients")

    n = grid.n_steps
    dt = grid.dt
    nodes = grid.nodes
    pvals = [np.asarray(c(nodes), dtype=float) for c in params]
    if isinstance(law, (Randomized, ExploratoryMean)):
        var = np.broadcast_to(np.asarray(law.policy.var(nodes[:-1]), dtype=float), (n,))
        slope = np.broadcast_to(np.asarray(law.policy.mean_slope(nodes[:-1]), dtype=float), (n,))
    record = isinstance(law, (SubstitutedCurve, Randomized))

    states = np.empty((n_paths, n + 1))
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim > 1 or (x0.ndim == 1 and x0.size != n_paths):
        raise ContractError(f"x0 must be a scalar or hold one state per path ({n_paths})")
    states[:, 0] = x0
    noise = np.empty((n_paths, n))
    controls = np.empty((n_paths, n)) if record else None

    def run(lo, hi):
        dw = normal_block_matrix(seed, NOISE_STREAM, lo, hi, n) * np.sqrt(dt)
        noise[lo:hi] = dw
        z = None
        if isinstance(law, Randomized):
            z = normal_block_matrix(seed, CONTROL_STREAM, lo, hi, n)
        x = states[lo:hi, 0].copy()
        # Blow-ups are reported below as SimulationError, not as warnings.
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(n):
                t = nodes[k]
                p = tuple(pv[k] for pv in pvals)
                if isinstance(law, Feedback):
                    u = law.u(t, x)
                    drift, diff = model.b(p, x, u), model.sigma(p, x, u)
                elif isinstance(law, ExploratoryMean):
                    drift, diff = exploratory_coefficients(model, p, x, slope[k] * x, var[k])
                else:
                    if isinstance(law, Randomized):
                        rho = slope[k] * x + np.sqrt(var[k]) * z[:, k]
                    else:
                        rho = law(t, x)
                    controls[lo:hi, k] = rho
                    if coefficients == "composed":
                        u = model.control(p, x, rho)
                        drift, diff = model.b(p, x, u), model.sigma(p, x, u)
                    else:
                        drift, diff = model.b_hat(p, x, rho), model.sigma_hat(p, x, rho)
                x = x + drift * dt + diff * dw[:, k]
                states[lo:hi, k + 1] = x

    workers = worker_count() if workers is None else max(1, int(workers))
    chunks = _chunks(n_paths, workers)
    if len(chunks) == 1:
        run(*chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            for fut in [pool.submit(run, lo, hi) for lo, hi in chunks]:
                fut.result()

    bad = ~np.isfinite(states)
    if bad.any():
        steps = np.where(bad.any(axis=0))[0]
        k = int(steps[0])
        i = int(np.where(bad[:, k])[0][0])
        raise SimulationError(i, k, float(states[i, k]))

    for arr in (states, noise, controls):
        if arr is not None:
            arr.setflags(write=False)
    return PathBundle(grid, states, noise, controls, int(seed), params)


# -- costs ----------------------------------------------------------------

def pathwise_cost(bundle: PathBundle, spec: CostSpec,
                  policy: Optional[GaussianPolicy] = None) -> np.ndarray:
    """
    Cost of each path: left-endpoint rectangle rule for the running cost
    plus the terminal cost.

    With a policy the running cost is the closed Gaussian average of ``f``
    plus ``lam`` times ``int pi ln pi``; otherwise ``f`` is evaluated at the
    recorded controls.
    """
    grid = bundle.grid
    n, dt = grid.n_steps, grid.dt
    nodes = grid.nodes
    X = bundle.states
    total = np.zeros(bundle.n_paths)
    if spec.f is not None or policy is not None:
        if policy is None and bundle.controls is None:
            raise ContractError("running cost depends on the control but the bundle recorded none")
        pvals = [np.asarray(c(nodes), dtype=float) for c in bundle.params]
        for k in range(n):
            t = nodes[k]
            p = tuple(pv[k] for pv in pvals)
            x = X[:, k]
            if policy is None:
                run = spec.f(p, x, bundle.controls[:, k])
            else:
                run = spec.lam * entropy_term(policy, t)
                if spec.f is not None:
                    run = run + gaussian_expectation(
                        lambda r: spec.f(p, x, r), policy.mean(t, x), policy.var(t))
            total += run * dt
    return total + spec.final(X[:, -1])


def evaluate_cost(bundle: PathBundle, spec: CostSpec,
                  policy: Optional[GaussianPolicy] = None) -> tuple:
    """Monte Carlo cost estimate and its standard error."""
    c = pathwise_cost(bundle, spec, policy)
    if c.size < 2:
        return float(c.mean()), 0.0
    return float(c.mean()), float(c.std(ddof=1) / np.sqrt(c.size))


def path_equivalence(model: CoefficientModel, params, x0: float, grid: TimeGrid,
                     n_paths: int, seed: int) -> float:
    """
    Largest gap between the classical optimal path and the substituted path.

    ``X^{u*}`` runs the original coefficients under the optimal feedback;
    ``X^rho`` runs the substituted system with ``rho`` set to the quantity
    it replaces, on the same Brownian increments.
    """
    params = _as_params(params)
    if not model.is_named:
        raise ContractError("path equivalence is defined for the named cases")

    def u_star(t, x):
        return model.feedback(param_values(params, t), x)

    def rho_true(t, x):
        return model.target(param_values(params, t), x)

    a = simulate(model, Feedback(u_star), params, x0, grid, n_paths, seed)
    b = simulate(model, SubstitutedCurve(rho_true), params, x0, grid, n_paths, seed,
                 coefficients="composed")
    return float(np.max(np.abs(a.states - b.states)))
