"""
Config-driven experiment runner.

Usage::

    paramlearn CONFIG [--out-dir DIR]

The config is flat ``key = value`` text with ``#`` comments. Exit codes:
0 success (all checks pass), 1 a verification check failed, 2 usage,
configuration or I/O error, 3 a numerical routine failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__, closed_form, learner, verification
from .curves import ParamCurve, TimeGrid
from .errors import ConfigError, ParamLearnError
from .gibbs import gibbs_at
from .models import diffusion_model, drift_model, general_model, named_cost
from .sde import THREADS_ENV, Randomized, simulate

__all__ = ["ExperimentConfig", "parse_config", "load_config", "run_experiment", "main"]

CASES = ("diffusion", "drift", "general", "custom")
COMMANDS = ("simulate", "policy", "verify", "learn", "two-step", "policy-iter")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


@dataclass
class ExperimentConfig:
    case: str = "diffusion"
    command: str = "verify"
    t0: float = 0.0
    T: float = 1.0
    n_steps: int = 100
    n_paths: int = 10_000
    episodes: int = 1000
    lam: float = 0.1
    x0: float = 1.0
    seed: int = 42
    beta_knots: Optional[tuple] = None
    beta_values: Optional[tuple] = None
    alpha_knots: Optional[tuple] = None
    alpha_values: Optional[tuple] = None
    rho_grid_min: Optional[float] = None
    rho_grid_max: Optional[float] = None
    rho_grid_points: int = 2001
    step: int = 1
    iterations: int = 3
    out_dir: str = "out"
    lines: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.t0, self.T, self.n_steps)

    def curve(self, name: str) -> ParamCurve:
        knots = getattr(self, f"{name}_knots") or (self.t0,)
        return ParamCurve(np.asarray(knots, dtype=float),
                          np.asarray(getattr(self, f"{name}_values"), dtype=float), self.T)

    def params(self) -> tuple:
        if self.case == "general":
            return (self.curve("alpha"), self.curve("beta"))
        return (self.curve("beta"),)

    def model(self, step: Optional[int] = None):
        if self.case == "diffusion":
            return diffusion_model()
        if self.case == "drift":
            return drift_model()
        return general_model(self.step if step is None else step)

    def items(self):
        """Resolved settings in config-file spelling."""
        for f in dataclasses.fields(self):
            if f.name == "lines":
                continue
            v = getattr(self, f.name)
            key = "lambda" if f.name == "lam" else f.name
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            yield key, "" if v is None else str(v)


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _int(s):
    return int(s, 10)


def _floats(s):
    items = [p.strip() for p in s.split(",")]
    if not items or any(p == "" for p in items):
        raise ValueError("empty list item")
    return tuple(_float(p) for p in items)


_PARSERS = {
    "case": str, "command": str, "t0": _float, "T": _float, "n_steps": _int,
    "n_paths": _int, "episodes": _int, "lambda": _float, "x0": _float, "seed": _int,
    "beta_knots": _floats, "beta_values": _floats, "alpha_knots": _floats,
    "alpha_values": _floats, "rho_grid_min": _float, "rho_grid_max": _float,
    "rho_grid_points": _int, "step": _int, "iterations": _int, "out_dir": str,
}


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse and validate a flat ``key = value`` config.

    Raises
    ------
    ConfigError
        Naming the offending line and key, for unknown keys, malformed
        values, duplicates, or violated preconditions.
    """
    cfg = ExperimentConfig()
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError("unknown key", line=lineno, key=key)
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key]})", line=lineno, key=key)
        try:
            parsed = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"malformed value {value!r} ({exc})", line=lineno, key=key) from None
        seen[key] = lineno
        setattr(cfg, "lam" if key == "lambda" else key, parsed)
    cfg.lines = seen
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    def fail(key, msg):
        raise ConfigError(msg, line=cfg.lines.get(key), key=key)

    if cfg.case not in CASES:
        fail("case", f"must be one of {', '.join(CASES)}")
    if cfg.case == "custom":
        fail("case", "custom coefficients are Python callables; use the library API (custom_model)")
    if cfg.command not in COMMANDS:
        fail("command", f"must be one of {', '.join(COMMANDS)}")
    if not cfg.lam > 0:
        fail("lambda", "lambda > 0 required")
    if not cfg.T > cfg.t0:
        fail("T", "T > t0 required")
    if cfg.n_steps < 1:
        fail("n_steps", "n_steps >= 1 required")
    if cfg.n_paths < 1:
        fail("n_paths", "n_paths >= 1 required")
    if cfg.seed < 0:
        fail("seed", "seed >= 0 required")
    if cfg.rho_grid_points < 3:
        fail("rho_grid_points", "at least 3 grid points required")
    if (cfg.rho_grid_min is None) != (cfg.rho_grid_max is None):
        fail("rho_grid_min" if cfg.rho_grid_min is None else "rho_grid_max",
             "rho_grid_min and rho_grid_max must be given together")
    if cfg.rho_grid_min is not None and not cfg.rho_grid_min < cfg.rho_grid_max:
        fail("rho_grid_max", "rho_grid_min < rho_grid_max required")
    if cfg.step not in (1, 2):
        fail("step", "step must be 1 or 2")
    if cfg.iterations < 0:
        fail("iterations", "iterations >= 0 required")
    names = ("alpha", "beta") if cfg.case == "general" else ("beta",)
    for name in names:
        if getattr(cfg, f"{name}_values") is None:
            fail(f"{name}_values", f"required for case {cfg.case}")
        knots = getattr(cfg, f"{name}_knots")
        if knots is not None and knots[0] != cfg.t0:
            fail(f"{name}_knots", f"first knot must equal t0 = {cfg.t0!r}")
        try:
            cfg.curve(name)
        except ParamLearnError as exc:
            key = f"{name}_knots" if f"{name}_knots" in cfg.lines else f"{name}_values"
            fail(key, str(exc))
    if cfg.command in ("learn", "two-step") and cfg.episodes < learner.MIN_EPISODES:
        fail("episodes", f"episodes >= {learner.MIN_EPISODES} required")
    if cfg.command == "policy-iter" and cfg.episodes < 2:
        fail("episodes", "episodes >= 2 required")
    if cfg.command == "verify" and cfg.n_paths < 10_000:
        fail("n_paths", "verify needs n_paths >= 10000 for moment matching")
    if cfg.command == "two-step" and cfg.case != "general":
        fail("command", "two-step requires case = general")
    if cfg.command == "learn" and cfg.case == "general":
        fail("command", "use command = two-step for the general case")


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# -- commands -------------------------------------------------------------

def _cmd_simulate(cfg, out: Path) -> int:
    model, params = cfg.model(), cfg.params()
    _, policy = closed_form.solve(model, params, cfg.lam, cfg.grid)
    bundle = simulate(model, Randomized(policy), params, cfg.x0, cfg.grid, cfg.n_paths, cfg.seed)
    bundle.to_csv(out / "paths.csv")
    return EXIT_OK


def _cmd_policy(cfg, out: Path) -> int:
    model, params = cfg.model(), cfg.params()
    value, policy = closed_form.solve(model, params, cfg.lam, cfg.grid)
    names = ("theta1", "theta2") if cfg.case == "general" else ("alpha1", "alpha2")
    closed_form.export_curves(out / "policy_curves.csv", cfg.grid, value, policy, names)
    rng = None if cfg.rho_grid_min is None else (cfg.rho_grid_min, cfg.rho_grid_max)
    d = gibbs_at(model, value, named_cost(model, cfg.lam), params, cfg.t0, cfg.x0,
                 m=cfg.rho_grid_points, rho_range=rng)
    d.to_csv(out / "gibbs_density.csv")
    return EXIT_OK


def _cmd_verify(cfg, out: Path) -> int:
    params = cfg.params()
    steps = (1, 2) if cfg.case == "general" else (None,)
    reports = []
    for s in steps:
        reports += verification.run_all(cfg.model(s), params, cfg.lam, cfg.grid, cfg.x0,
                                        cfg.n_paths, cfg.seed)
    verification.write_reports_csv(out / "verification.csv", reports)
    print(verification.summarize(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED


def _cmd_learn(cfg, out: Path) -> int:
    res = learner.estimate_beta(cfg.model(), cfg.params(), cfg.lam, cfg.grid, cfg.episodes,
                                cfg.seed, x0=cfg.x0)
    res.to_csv(out / "estimates.csv")
    return EXIT_OK


def _cmd_two_step(cfg, out: Path) -> int:
    alpha, beta = cfg.params()
    a_hat, b_hat = learner.two_step_estimate(alpha, beta, cfg.lam, cfg.grid, cfg.episodes,
                                             cfg.seed, x0=cfg.x0)
    b_hat.to_csv(out / "estimates_beta.csv")
    a_hat.to_csv(out / "estimates_alpha.csv")
    return EXIT_OK


def _cmd_policy_iter(cfg, out: Path) -> int:
    _, _, trace = learner.policy_iteration(cfg.model(), cfg.params(), cfg.lam, cfg.grid,
                                           cfg.episodes, cfg.iterations, cfg.seed)
    learner.write_trace_csv(out / "policy_iteration.csv", trace)
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "policy": _cmd_policy,
    "verify": _cmd_verify,
    "learn": _cmd_learn,
    "two-step": _cmd_two_step,
    "policy-iter": _cmd_policy_iter,
}


def write_manifest(cfg: ExperimentConfig, out: Path) -> None:
    lines = ["# run manifest"]
    lines += [f"{k} = {v}" for k, v in cfg.items()]
    lines += [
        f"paramlearn_version = {__version__}",
        f"python_version = {platform.python_version()}",
        f"numpy_version = {np.__version__}",
        f"scipy_version = {scipy.__version__}",
        f"threads_env = {THREADS_ENV}={os.environ.get(THREADS_ENV, '')}",
        f"timestamp = {time.strftime('%Y-%m-%dT%H:%M:%S%z')}",
    ]
    (out / "run_manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run the configured command and return the process exit code."""
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(cfg, out)
    except OSError as exc:
        print(f"error: cannot write to output directory {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[cfg.command](cfg, out)
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParamLearnError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="paramlearn", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("config", help="flat key = value config file")
    ap.add_argument("--out-dir", help="output directory (overrides out_dir in the config)")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out_dir:
        cfg.out_dir = args.out_dir
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
