"""
Time grids and piecewise-constant parameter curves.

Every unknown parameter and every coefficient curve in the package is a
right-continuous step function of time on a closed horizon ``[t0, T]``.
Restricting to step functions buys exact integrals, and therefore exact
solutions of the linear coefficient ODEs that appear in the closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError

__all__ = [
    "TimeGrid",
    "ParamCurve",
    "curve_eval",
    "curve_integral",
    "exp_integral",
]

# Slack for time comparisons; grid nodes are computed in floating point.
_TIME_EPS = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = t0 + k*dt`` with the final node pinned to ``T``."""

    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.t0) or not np.isfinite(self.T):
            raise DomainError("grid end points must be finite")
        if not self.T > self.t0:
            raise DomainError(f"need T > t0, got t0={self.t0}, T={self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @cached_property
    def nodes(self) -> np.ndarray:
        k = np.arange(self.n_steps + 1)
        t = self.t0 + k * self.dt
        t[-1] = self.T
        t.setflags(write=False)
        return t

    def __len__(self):
        return self.n_steps + 1

    def index_of(self, t: float) -> int:
        """Index of the node closest to ``t``."""
        return int(np.clip(round((t - self.t0) / self.dt), 0, self.n_steps))

    def tail(self, k: int) -> "TimeGrid":
        """Sub-grid starting at node ``k`` and ending at ``T``."""
        if not 0 <= k < self.n_steps:
            raise DomainError(f"tail index {k} outside [0, {self.n_steps})")
        return TimeGrid(float(self.nodes[k]), self.T, self.n_steps - k)

    def describe(self) -> str:
        return f"[{self.t0:g}, {self.T:g}] x {self.n_steps} steps"


@dataclass(frozen=True, eq=False)
class ParamCurve:
    """
    Right-continuous piecewise-constant function on ``[t0, T]``.

    Parameters
    ----------
    knots : sequence of float
        Strictly ascending left end points of the pieces. ``knots[0]`` is
        ``t0``; the last piece runs from ``knots[-1]`` to ``T`` inclusive.
    values : sequence of float
        One value per piece.
    T : float
        Right end of the horizon.
    """

    knots: np.ndarray
    values: np.ndarray
    T: float
    _edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float).ravel()
        values = np.array(self.values, dtype=float).ravel()
        if knots.size == 0:
            raise DomainError("a curve needs at least one knot")
        if knots.size != values.size:
            raise DomainError(
                f"{knots.size} knots but {values.size} values; need one value per piece"
            )
        if np.any(np.diff(knots) <= 0):
            raise DomainError("knots must be strictly ascending")
        if not np.all(np.isfinite(values)):
            raise DomainError("curve values must be finite")
        T = float(self.T)
        if knots[-1] > T:
            raise DomainError(f"last knot {knots[-1]} lies beyond T={T}")
        if knots.size == 1 and not T > knots[0]:
            raise DomainError("need T > t0")
        knots.setflags(write=False)
        values.setflags(write=False)
        edges = np.append(knots, T)
        edges.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "_edges", edges)

    @classmethod
    def constant(cls, value: float, t0: float = 0.0, T: float = 1.0) -> "ParamCurve":
        return cls([t0], [value], T)

    @classmethod
    def from_lists(cls, knots: Sequence[float], values: Sequence[float], T: float) -> "ParamCurve":
        return cls(knots, values, T)

    @property
    def t0(self) -> float:
        return float(self.knots[0])

    @property
    def interior_knots(self) -> np.ndarray:
        """Knots strictly inside the horizon, where the curve may jump."""
        return self.knots[1:]

    def _check_times(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t0 - _TIME_EPS) or np.any(t > self.T + _TIME_EPS) or np.any(np.isnan(t)):
            raise DomainError(
                f"time outside [{self.t0}, {self.T}]: "
                f"{t.min() if t.size else t}..{t.max() if t.size else t}"
            )
        return t

    def __call__(self, t):
        t = self._check_times(t)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        idx = np.clip(idx, 0, self.values.size - 1)
        out = self.values[idx]
        return float(out) if out.ndim == 0 else out

    def integral(self, a, b):
        """Exact integral over ``[a, b]``; broadcasts over array arguments."""
        a = self._check_times(a)
        b = self._check_times(b)
        if np.any(a > b):
            raise DomainError("integral lower limit exceeds upper limit")
        lo = self._edges[:-1]
        hi = self._edges[1:]
        overlap = np.minimum(b[..., None], hi) - np.maximum(a[..., None], lo)
        out = np.sum(self.values * np.clip(overlap, 0.0, None), axis=-1)
        return float(out) if out.ndim == 0 else out

    # -- arithmetic -------------------------------------------------------

    @staticmethod
    def combine(func: Callable[..., np.ndarray], *curves: "ParamCurve") -> "ParamCurve":
        """Apply ``func`` piecewise to curves that share a horizon."""
        t0, T = curves[0].t0, curves[0].T
        for c in curves[1:]:
            if abs(c.t0 - t0) > _TIME_EPS or abs(c.T - T) > _TIME_EPS:
                raise DomainError("curves live on different horizons")
        knots = np.unique(np.concatenate([c.knots for c in curves]))
        vals = func(*[c(knots) for c in curves])
        return ParamCurve(knots, np.broadcast_to(vals, knots.shape), T)

    def _binary(self, other, op):
        if isinstance(other, ParamCurve):
            return ParamCurve.combine(op, self, other)
        return ParamCurve(self.knots, op(self.values, float(other)), self.T)

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return ParamCurve(self.knots, float(other) - self.values, self.T)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return ParamCurve(self.knots, -self.values, self.T)

    def __repr__(self):
        pieces = ", ".join(f"[{k:g}: {v:g}]" for k, v in zip(self.knots, self.values))
        return f"ParamCurve({pieces}, T={self.T:g})"


def curve_eval(curve: ParamCurve, t: float) -> float:
    return curve(t)


def curve_integral(curve: ParamCurve, a: float, b: float) -> float:
    return curve.integral(a, b)


def exp_integral(curve: ParamCurve, t, T=None):
    """``exp(int_t^T curve(s) ds)``; ``T`` defaults to the curve horizon."""
    if T is None:
        T = curve.T
    t = np.asarray(t, dtype=float)
    return np.exp(curve.integral(t, np.broadcast_to(np.asarray(T, dtype=float), t.shape)))
