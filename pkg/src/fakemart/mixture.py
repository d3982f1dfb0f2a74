"""Residual law and local volatility of the Bernoulli-mixture fake process.

Given a reference law f_t, a clock a(t) with ratio bound K and a weight
c in (0, K), the marginals split as

    f_t = c f_{a(t)} + (1 - c) h_t,    h_t = (f_t - c f_{a(t)}) / (1 - c).

The family h_t increases in convex order and is the marginal family of the
martingale diffusion dH = eta(t, H) dB with

    eta^2 = sigma^2 (f_t - c a'(t) f_{a(t)}) / (f_t - c f_{a(t)}).

All ratios are evaluated through r = f_{a(t)} / f_t computed in log space;
r <= 1/K so the denominators stay >= 1 - c/K > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .laws import DiffusionLaw, DomainError
from .timechange import TimeChange, default_ratio_grid, ratio_infimum

__all__ = [
    "SpecError",
    "MixingWeightError",
    "ClockSpeedError",
    "ClockMonotonicityError",
    "RatioBoundError",
    "FakeSpec",
    "ResidualLaw",
    "validate_spec",
    "audit_grid",
    "density_ratio",
    "residual_density",
    "local_vol_eta",
    "eta_sq_over_sigma_sq",
    "eta_sq_ratio_at",
    "eta_bound_margins",
    "convexity_rate",
    "residual_call",
]


class SpecError(ValueError):
    """A (law, clock, c) triple that violates the construction's hypotheses."""


class MixingWeightError(SpecError):
    """c outside (0, K)."""


class ClockSpeedError(SpecError):
    """a'(t) >= 1 (or <= 0) somewhere on the audit grid."""


class ClockMonotonicityError(SpecError):
    """a is not strictly increasing, a(0) != 0, or a(t) >= t."""


class RatioBoundError(SpecError):
    """The grid estimate of inf f_t / f_{a(t)} does not exceed c."""


@dataclass(frozen=True)
class FakeSpec:
    law: DiffusionLaw
    tc: TimeChange
    c: float

    @property
    def K(self) -> float:
        return self.tc.K

    @property
    def L2(self) -> float:
        """Upper bound on eta^2 / sigma^2: K / (K - c)."""
        return self.K / (self.K - self.c)


def audit_grid(law: DiffusionLaw, n_times: int = 64, n_states: int = 201):
    """64 log-spaced times in [1e-3, 16] x 201 states spanning +-6 sd."""
    return default_ratio_grid(law, n_times, n_states, t_range=(1e-3, 16.0), width=6.0)


def validate_spec(law: DiffusionLaw, tc: TimeChange, c: float, grid=None) -> FakeSpec:
    """Check every hypothesis of the construction and package a :class:`FakeSpec`.

    Checks run in order: weight range, clock start and monotonicity, clock
    speed, grid ratio bound. ``K`` itself is taken from the clock; the grid
    infimum is only a cross-check.
    """
    c = float(c)
    K = float(tc.K)
    if not (0.0 < c < 1.0) or not math.isfinite(c):
        raise MixingWeightError(f"c must lie in (0, 1), got {c}")
    if not c < K:
        raise MixingWeightError(f"c must be < K = {K}, got c = {c}")

    times, states = grid if grid is not None else audit_grid(law)
    a0 = float(tc.a(0.0))
    at = np.asarray(tc.a(times), dtype=float)
    if a0 != 0.0:
        raise ClockMonotonicityError(f"a(0) must be 0, got {a0}")
    if np.any(np.diff(np.concatenate([[a0], at])) <= 0):
        raise ClockMonotonicityError("a is not strictly increasing on the audit grid")
    if np.any(at >= times):
        raise ClockMonotonicityError("a(t) < t violated on the audit grid")
    ad = np.asarray(tc.a_dot(times), dtype=float)
    if np.any(ad >= 1.0):
        bad = times[np.argmax(ad)]
        raise ClockSpeedError(f"a'(t) < 1 violated (a'({bad:.4g}) = {ad.max():.6g})")
    if np.any(ad <= 0.0):
        raise ClockSpeedError("a'(t) > 0 violated on the audit grid")

    k_hat = ratio_infimum(law, tc, times, states)
    if k_hat <= c:
        raise RatioBoundError(f"grid ratio infimum {k_hat:.6g} does not exceed c = {c}")
    return FakeSpec(law=law, tc=tc, c=c)


def density_ratio(spec: FakeSpec, t, y):
    """r = f_{a(t)}(y) / f_t(y), formed in log space."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("mixture quantities require t > 0")
    at = spec.tc.a(t)
    return np.exp(spec.law.log_density(at, y) - spec.law.log_density(t, y))


def residual_density(spec: FakeSpec, t, y):
    """h_t(y) = (f_t(y) - c f_{a(t)}(y)) / (1 - c)."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("residual density requires t > 0")
    c = spec.c
    ft = spec.law.density(t, y)
    fa = spec.law.density(spec.tc.a(t), y)
    h = (ft - c * fa) / (1.0 - c)
    if np.any(h < 0):
        raise SpecError("negative residual density: c >= K for this clock")
    return h


def eta_sq_over_sigma_sq(spec: FakeSpec, t, y):
    """eta(t, y)^2 / sigma(y)^2 = (1 - c a'(t) r) / (1 - c r)."""
    c = spec.c
    r = density_ratio(spec, t, y)
    ad = spec.tc.a_dot(t)
    return (1.0 - c * ad * r) / (1.0 - c * r)


def eta_sq_ratio_at(spec: FakeSpec, t: float, at: float, ad: float, y):
    """:func:`eta_sq_over_sigma_sq` with a(t) and a'(t) supplied by the caller.

    Used by the path simulator, which tabulates the clock once per grid.
    """
    law = spec.law
    r = np.exp(law.log_density(at, y) - law.log_density(t, y))
    c = spec.c
    return (1.0 - c * ad * r) / (1.0 - c * r)


def local_vol_eta(spec: FakeSpec, t, y):
    """Local volatility of the residual diffusion H."""
    return spec.law.sigma(y) * np.sqrt(eta_sq_over_sigma_sq(spec, t, y))


def eta_bound_margins(spec: FakeSpec, t, y):
    """Cancellation-free margins of 1 <= eta^2/sigma^2 < 1/(1 - c r) <= L^2.

    Returns ``(lower, upper, cap)`` with

    * ``lower = eta^2/sigma^2 - 1 = c r (1 - a') / (1 - c r)``  (>= 0)
    * ``upper = 1/(1 - c r) - eta^2/sigma^2 = c a' r / (1 - c r)``  (> 0)
    * ``cap = L^2 - 1/(1 - c r) = c (1/K - r) L^2 / (1 - c r)``  (>= 0)

    Written this way the strict inequalities stay visible where 1 - c r
    rounds to 1.
    """
    c = spec.c
    r = density_ratio(spec, t, y)
    ad = spec.tc.a_dot(t)
    den = 1.0 - c * r
    lower = c * r * (1.0 - ad) / den
    upper = c * ad * r / den
    cap = c * (1.0 / spec.K - r) * spec.L2 / den
    return lower, upper, cap


def convexity_rate(spec: FakeSpec, t, y):
    """d/dt E[(H_t - y)^+] = (sigma^2/2) (f_t - c a' f_{a(t)}) / (1 - c).

    Carries the factor 1/2 from the Tanaka-formula identity for call prices.
    """
    c = spec.c
    ft = spec.law.density(t, y)
    r = density_ratio(spec, t, y)
    ad = spec.tc.a_dot(t)
    s = spec.law.sigma(y)
    return 0.5 * s * s * ft * (1.0 - c * ad * r) / (1.0 - c)


def residual_call(spec: FakeSpec, t, k):
    """Closed-form call prices of h_t: (C(t,k) - c C(a(t),k)) / (1 - c)."""
    law = spec.law
    return (law.call(t, k) - spec.c * law.call(spec.tc.a(t), k)) / (1.0 - spec.c)


@dataclass(frozen=True)
class ResidualLaw:
    """The marginal family h_t of the residual diffusion H."""

    spec: FakeSpec

    def density(self, t, y):
        return residual_density(self.spec, t, y)

    def call(self, t, k):
        return residual_call(self.spec, t, k)

    def call_quad(self, t: float, k: float) -> float:
        """Adaptive-quadrature price of a call on h_t."""
        return self.spec.law.call_quad(t, k, density=lambda y: residual_density(self.spec, t, y))

    def call_grid(self, t: float, strikes, otm: bool = False) -> np.ndarray:
        """Gauss-Legendre prices of calls (or OTM options) on h_t for many strikes."""
        return self.spec.law.call_grid(t, strikes, otm=otm,
                                       density=lambda y: residual_density(self.spec, t, y))

    def mass(self, t: float) -> float:
        return self.spec.law.expect(lambda y: 1.0, t, density=lambda y: residual_density(self.spec, t, y))

    def mean(self, t: float) -> float:
        return self.spec.law.expect(lambda y: y, t, density=lambda y: residual_density(self.spec, t, y))
