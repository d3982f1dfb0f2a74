"""Discontinuous fake exponential Brownian motion by Azema-Yor embedding.

For each report time t the stopping rule is

    tau_t = inf{s : M_s >= b_t(B_s)},

where B is Brownian motion started at 1, M its running maximum and
b_t(x) = E[P_t | P_t >= x] the barycentre of the lognormal marginal. Since
b_t increases pointwise in t the stopping times are nested and X~_t = B_{tau_t}
is a martingale with lognormal marginals, but with jumps.

Equivalently B stops once it falls to theta_t(M) = b_t^{-1}(M). theta only
changes when M makes a new maximum, so the kernel solves for it there and
otherwise compares B against a cached level.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numba as nb
import numpy as np
from scipy import integrate, special

from .laws import DomainError, lognormal_density
from .simulate import RNGConfig

__all__ = [
    "HorizonExhaustedError",
    "barycentre_lognormal",
    "barycentre_quadrature",
    "EmbeddedProcess",
    "madan_yor_paths",
    "MRLReport",
    "check_mrl_order",
]

DEFAULT_STEP_BUDGET = 10_000_000
_FIRST_CHUNK = 16_384
# -zeta(1/2) / sqrt(2 pi): expected gap between the continuous and the
# discretely monitored maximum of Brownian motion, per unit step sd.
MAX_SHIFT = 0.5825971579390106


class HorizonExhaustedError(RuntimeError):
    """Some paths did not reach every stopping boundary within the step budget."""

    def __init__(self, msg: str, path_ids: np.ndarray):
        super().__init__(msg)
        self.path_ids = path_ids


def barycentre_lognormal(t, x):
    """b_t(x) = E[P_t | P_t >= x] = Phi(d+) / Phi(d-), d+- = -ln x / sqrt(t) +- sqrt(t)/2.

    Evaluated as exp(log Phi(d+) - log Phi(d-)); ``log_ndtr`` stays accurate
    in the far tail where Phi(d-) itself underflows, so no 0/0 occurs.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("barycentre requires t > 0")
    if np.any(~(x > 0)):
        raise DomainError("barycentre requires x > 0")
    st = np.sqrt(t)
    d_plus = -np.log(x) / st + 0.5 * st
    out = np.exp(special.log_ndtr(d_plus) - special.log_ndtr(d_plus - st))
    # Guards the ratio's last-ulp rounding in the far tail, where b -> x.
    out = np.maximum(out, x)
    return out[()] if out.ndim == 0 else out


def barycentre_quadrature(t: float, x: float) -> float:
    """Quadrature oracle: int_x^inf z p_t(z) dz / int_x^inf p_t(z) dz."""
    lo = math.log(x)
    hi = max(lo, 0.0) + 1.5 * t + 12.0 * math.sqrt(t)
    dens = lambda u: lognormal_density(t, math.exp(u)) * math.exp(u)  # noqa: E731
    num = integrate.quad(lambda u: math.exp(u) * dens(u), lo, hi, epsabs=0, epsrel=1e-13, limit=200)[0]
    den = integrate.quad(dens, lo, hi, epsabs=0, epsrel=1e-13, limit=200)[0]
    return num / den


@nb.njit(cache=True)
def _ncdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@nb.njit(cache=True)
def _bary_inverse(st, m, guess):
    """theta with b(theta) = m, or 0 when m <= 1 (no state reaches it).

    Safeguarded Newton on ln theta inside [ln 1e-300, ln m], warm-started
    from the previous level.
    """
    if m <= 1.0:
        return 0.0
    lo = math.log(1e-300)
    hi = math.log(m)
    u = math.log(guess) if guess > 0.0 else 0.5 * (lo + hi)
    if u <= lo or u >= hi:
        u = 0.5 * (lo + hi)
    for _ in range(200):
        x = math.exp(u)
        dp = -u / st + 0.5 * st
        s = _ncdf(dp - st)
        b = _ncdf(dp) / s
        g = b - m
        if g > 0.0:
            hi = u
        else:
            lo = u
        # db/du = x * p(x) * (b - x) / S, p the lognormal density
        px = math.exp(-0.5 * (dp - st) ** 2) / (x * st * math.sqrt(2.0 * math.pi))
        slope = x * px * (b - x) / s
        if slope > 0.0:
            u_new = u - g / slope
        else:
            u_new = 0.5 * (lo + hi)
        if not (lo < u_new < hi):
            u_new = 0.5 * (lo + hi)
        if abs(u_new - u) <= 1e-14 * max(1.0, abs(u)) or hi - lo <= 1e-14 * max(1.0, abs(u)):
            u = u_new
            break
        u = u_new
    return math.exp(u)


@nb.njit(cache=True, nogil=True)
def _advance(z, sd, state, sts, theta, hit_step, hit_val, step0, shift):
    """Run one noise chunk; returns the number of levels still open.

    state = [B, M]; level j stops at the first step with B <= theta[j],
    theta[j] solving b_j(theta) = M + shift.
    """
    n_lv = sts.shape[0]
    b = state[0]
    m = state[1]
    open_lv = 0
    for j in range(n_lv):
        if hit_step[j] < 0:
            open_lv += 1
    for i in range(z.shape[0]):
        b += sd * z[i]
        if b > m:
            m = b
            for j in range(n_lv):
                if hit_step[j] < 0:
                    theta[j] = _bary_inverse(sts[j], m + shift, theta[j])
        for j in range(n_lv):
            if hit_step[j] < 0 and b <= theta[j]:
                hit_step[j] = step0 + i + 1
                hit_val[j] = b
                open_lv -= 1
        if open_lv == 0:
            break
    state[0] = b
    state[1] = m
    return open_lv


@dataclass
class EmbeddedProcess:
    """Stopped values B_{tau_t} at the report times, one row per path."""

    report_times: np.ndarray
    values: np.ndarray
    stop_steps: np.ndarray
    bm_step: float
    seed: int
    exhausted: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def monotone_fraction(self) -> float:
        """Fraction of paths whose stopping steps are non-decreasing in t."""
        ok = np.all(np.diff(self.stop_steps, axis=1) >= 0, axis=1)
        return float(np.mean(ok))


def madan_yor_paths(report_times: Sequence[float], n_paths: int, bm_step: float,
                    rng: RNGConfig, *, step_budget: int = DEFAULT_STEP_BUDGET,
                    strict: bool = True, reverse: bool = False,
                    continuity_correction: bool = True) -> EmbeddedProcess:
    """Simulate the Azema-Yor embedding of the lognormal marginals.

    B is an Euler random walk with step variance ``bm_step``; crossings are
    detected by level comparison (no bridge correction). Each level's
    stopping time is searched from time 0 independently of the others, so
    nestedness is an observed property rather than an imposed one.

    The running maximum of the walk undershoots that of the continuous path
    by about beta * sqrt(bm_step), beta = -zeta(1/2)/sqrt(2 pi); with
    ``continuity_correction`` the boundary is read at M + beta sqrt(bm_step).
    Without it, walks that start downwards see theta = 0 and stop near or
    below zero.

    ``reverse=True`` assigns the barycentre curves in reversed time order
    (a family decreasing in t); it exists for negative-control runs.

    Raises
    ------
    HorizonExhaustedError
        If ``strict`` and some path used up ``step_budget`` before stopping
        at every report time. With ``strict=False`` such paths are flagged
        in ``exhausted`` and carry NaN values.
    """
    t = np.asarray(report_times, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("report times must be positive and strictly increasing")
    if not bm_step > 0:
        raise ValueError("bm_step must be > 0")
    sts = np.sqrt(t[::-1] if reverse else t)
    sd = math.sqrt(bm_step)
    shift = MAX_SHIFT * sd if continuity_correction else 0.0
    n_lv = t.size

    values = np.full((n_paths, n_lv), np.nan)
    steps = np.full((n_paths, n_lv), -1, dtype=np.int64)
    exhausted = np.zeros(n_paths, dtype=bool)

    def one_path(pid):
        gen = rng.path_generator(pid)
        state = np.array([1.0, 1.0])
        theta = np.array([_bary_inverse(s, 1.0 + shift, 0.0) for s in sts])
        hit_step = np.full(n_lv, -1, dtype=np.int64)
        hit_val = np.full(n_lv, np.nan)
        used = 0
        chunk = _FIRST_CHUNK
        while used < step_budget:
            n = min(chunk, step_budget - used)
            z = gen.standard_normal(n)
            if _advance(z, sd, state, sts, theta, hit_step, hit_val, used, shift) == 0:
                return hit_step, hit_val, False
            used += n
            chunk *= 2
        return hit_step, hit_val, True

    def work(lo_hi):
        lo, hi = lo_hi
        for pid in range(lo, hi):
            hs, hv, ex = one_path(pid)
            steps[pid] = hs
            values[pid] = hv
            exhausted[pid] = ex

    bs = rng.batch_size
    batches = [(i, min(i + bs, n_paths)) for i in range(0, n_paths, bs)]
    if rng.workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=rng.workers) as pool:
            list(pool.map(work, batches))
    else:
        for b in batches:
            work(b)

    if strict and exhausted.any():
        bad = np.flatnonzero(exhausted)
        raise HorizonExhaustedError(
            f"{bad.size} path(s) exceeded the step budget of {step_budget}", bad)
    values[exhausted] = np.nan
    return EmbeddedProcess(report_times=t, values=values, stop_steps=steps, bm_step=bm_step,
                           seed=rng.seed, exhausted=exhausted)


@dataclass(frozen=True)
class MRLReport:
    passed: bool
    min_difference: float
    worst_t: Optional[float]
    worst_x: Optional[float]


def check_mrl_order(t_grid, x_grid,
                    barycentre: Callable = barycentre_lognormal) -> MRLReport:
    """Check that b_t(x) is non-decreasing in t at every grid state.

    ``min_difference`` is the smallest b_{t_{i+1}}(x) - b_{t_i}(x); the
    located worst pair is reported whether or not the check passes.
    """
    t = np.asarray(t_grid, dtype=float)
    x = np.asarray(x_grid, dtype=float)
    if t.size < 2:
        return MRLReport(True, math.inf, None, None)
    b = np.stack([barycentre(ti, x) for ti in t])
    d = np.diff(b, axis=0)
    i, j = np.unravel_index(np.argmin(d), d.shape)
    worst = float(d[i, j])
    return MRLReport(worst >= 0.0, worst, float(t[i]), float(x[j]))
