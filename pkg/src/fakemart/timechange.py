"""Slowdown clocks a(t) used to build the time-changed component G_t = X_{a(t)}.

A clock is admissible when a(0) = 0, a is strictly increasing, a(t) < t and
0 < a'(t) < 1. ``K`` is the ratio bound inf_t inf_y f_t(y) / f_{a(t)}(y).

Shipped clocks:

* Brownian motion: a(t) = K^2 t.
* Exponential Brownian motion: a(t) = psi^{-1}(K psi(t)) with
  psi(t) = sqrt(t) exp(t/8), and a'(t) = phi(t) / phi(a(t)) with
  phi(t) = (t + 4) / (8t).
* Tabulated: monotone cubic interpolation of user-supplied (t, a(t)) pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .laws import DiffusionLaw, DomainError

__all__ = [
    "InvalidClockError",
    "TimeChange",
    "psi",
    "phi",
    "make_timechange_ebm",
    "make_timechange_bm",
    "make_timechange_tabulated",
    "make_timechange",
    "ratio_infimum",
    "default_ratio_grid",
]


class InvalidClockError(ValueError):
    """Clock parameters outside their admissible range."""


@dataclass(frozen=True)
class TimeChange:
    K: float
    a: Callable = field(repr=False)
    a_dot: Callable = field(repr=False)
    kind: str


def psi(t):
    """psi(t) = sqrt(t) * exp(t/8), strictly increasing on [0, inf)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("psi requires t >= 0")
    out = np.sqrt(t) * np.exp(t / 8.0)
    return out[()] if out.ndim == 0 else out


def phi(t):
    """phi(t) = (t + 4) / (8t) = psi'(t) / psi(t), strictly decreasing on (0, inf)."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("phi requires t > 0")
    out = (t + 4.0) / (8.0 * t)
    return out[()] if out.ndim == 0 else out


def _check_K(K: float) -> float:
    K = float(K)
    if not 0.0 < K < 1.0:
        raise InvalidClockError(f"K must lie in (0, 1), got {K}")
    return K


def _ebm_clock(K: float, t: np.ndarray) -> np.ndarray:
    """Solve psi(a) = K psi(t) for a, elementwise, in log-time.

    With u = ln a the equation reads g(u) = u/2 + e^u/8 - ln(K psi(t)) = 0.
    g is increasing and convex, and the root is bracketed by
    [ln(K^2 t), ln t]. Newton started from the right end of the bracket
    therefore decreases monotonically onto the root; iterates are clipped to
    the bracket as a safeguard.
    """
    out = np.zeros_like(t)
    live = t > 0
    tl = t[live]
    log_t = np.log(tl)
    target = math.log(K) + 0.5 * log_t + tl / 8.0
    lo = 2.0 * math.log(K) + log_t
    u = log_t.copy()
    for _ in range(100):
        eu = np.exp(u)
        g = 0.5 * u + eu / 8.0 - target
        step = g / (0.5 + eu / 8.0)
        u_new = np.clip(u - step, lo, log_t)
        done = np.abs(u_new - u) <= 1e-15 * np.maximum(1.0, np.abs(u))
        u = u_new
        if np.all(done):
            break
    out[live] = np.exp(u)
    return out


def make_timechange_ebm(K: float) -> TimeChange:
    """Clock for exponential Brownian motion with ratio bound exactly ``K``."""
    K = _check_K(K)

    def a(t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("clock requires t >= 0")
        out = _ebm_clock(K, np.atleast_1d(t)).reshape(t.shape)
        return out[()] if out.ndim == 0 else out

    def a_dot(t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("clock requires t >= 0")
        tt = np.atleast_1d(t)
        at = _ebm_clock(K, tt)
        out = np.full_like(tt, K * K)
        live = tt > 0
        # phi(t) / phi(a), rearranged to stay finite as t -> 0.
        out[live] = at[live] * (tt[live] + 4.0) / (tt[live] * (at[live] + 4.0))
        out = out.reshape(t.shape)
        return out[()] if out.ndim == 0 else out

    return TimeChange(K=K, a=a, a_dot=a_dot, kind="exponential-brownian")


def make_timechange_bm(K: float) -> TimeChange:
    """Linear clock a(t) = K^2 t for Brownian motion."""
    K = _check_K(K)
    k2 = K * K

    def a(t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("clock requires t >= 0")
        out = k2 * t
        return out[()] if out.ndim == 0 else out

    def a_dot(t):
        out = np.full_like(np.asarray(t, dtype=float), k2)
        return out[()] if out.ndim == 0 else out

    return TimeChange(K=K, a=a, a_dot=a_dot, kind="brownian")


def make_timechange_tabulated(times: Sequence[float], values: Sequence[float],
                              K: float) -> TimeChange:
    """Monotone (PCHIP) interpolation of a tabulated clock.

    ``K`` has to be supplied: no closed-form ratio bound exists for an
    arbitrary clock. Use :func:`ratio_infimum` to estimate one. Admissibility
    (a' < 1, monotonicity) is checked later by ``validate_spec``, not here.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.ndim != 1 or times.shape != values.shape or times.size < 2:
        raise InvalidClockError("times and values must be equal-length 1-d arrays")
    if times[0] != 0.0 or values[0] != 0.0:
        raise InvalidClockError("tabulated clock must start at (0, 0)")
    interp = PchipInterpolator(times, values, extrapolate=False)
    deriv = interp.derivative()

    def a(t):
        return interp(np.asarray(t, dtype=float))[()]

    def a_dot(t):
        return deriv(np.asarray(t, dtype=float))[()]

    return TimeChange(K=float(K), a=a, a_dot=a_dot, kind="tabulated")


def make_timechange(law: DiffusionLaw, K: float) -> TimeChange:
    """The shipped clock matching ``law`` (by name)."""
    if law.name == "ebm":
        return make_timechange_ebm(K)
    if law.name == "bm":
        return make_timechange_bm(K)
    raise ValueError(f"no analytic clock for law {law.name!r}")


def default_ratio_grid(law: DiffusionLaw, n_times: int = 64, n_states: int = 201,
                       t_range=(1e-3, 16.0), width: float = 6.0):
    """Default audit grid: log-spaced times, states +-``width`` sd at each time."""
    times = np.geomspace(t_range[0], t_range[1], n_times)
    states = np.stack([law.state_grid(t, n_states, width) for t in times])
    return times, states


def ratio_infimum(law: DiffusionLaw, tc: TimeChange, t_grid=None, y_grid=None) -> float:
    """Grid infimum of f_t(y) / f_{a(t)}(y).

    ``y_grid`` may be 1-d (shared by all times) or 2-d with one row per time.
    Ratios are formed in log space so far-tail states cannot produce 0/0.
    """
    if t_grid is None:
        t_grid, default_states = default_ratio_grid(law)
        if y_grid is None:
            y_grid = default_states
    if y_grid is None:
        y_grid = np.stack([law.state_grid(t) for t in np.atleast_1d(t_grid)])
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    y = np.asarray(y_grid, dtype=float)
    if t.size == 0 or y.size == 0:
        raise ValueError("ratio_infimum needs non-empty grids")
    if np.any(t <= 0):
        raise DomainError("ratio grid times must be > 0")
    if y.ndim == 1:
        y = np.broadcast_to(y, (t.size, y.size))
    at = np.asarray(tc.a(t), dtype=float)
    log_ratio = law.log_density(t[:, None], y) - law.log_density(at[:, None], y)
    return float(np.exp(np.min(log_ratio)))
