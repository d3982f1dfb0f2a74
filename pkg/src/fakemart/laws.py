"""Marginal laws of the two reference martingale diffusions.

Two concrete laws ship:

* ``ExponentialBMLaw``: dP/P = dB, P_0 = 1, lognormal marginals.
* ``BrownianLaw``: dX = dB, X_0 = 0, centred Gaussian marginals.

Both expose densities, log-densities, CDFs and closed-form call prices
E[(X_t - k)^+]. Time zero is a point mass at ``x0``: densities require
t > 0, call prices accept t = 0.

Quadrature helpers compute call prices and moments from an arbitrary density,
which is how the residual laws of the mixture construction are priced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy import integrate, special

__all__ = [
    "DomainError",
    "QuadratureError",
    "norm_cdf",
    "lognormal_density",
    "gaussian_density",
    "bs_call",
    "bachelier_call",
    "call_from_density",
    "otm_call_grid",
    "DiffusionLaw",
    "ExponentialBMLaw",
    "BrownianLaw",
    "get_law",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Width of the truncated support in standard deviations of the (log-)state.
SUPPORT_WIDTH = 8.0


class DomainError(ValueError):
    """Argument outside the domain of a density, price or clock."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


def norm_cdf(x):
    """Standard normal CDF (``scipy.special.ndtr``, ~1 ulp accuracy)."""
    return special.ndtr(x)


def _check_positive_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("density requires t > 0")
    return t


def lognormal_density(t, x):
    """Density of unit-volatility exponential Brownian motion started at 1.

    p_t(x) = exp(-t/8) / sqrt(2 pi t) * x^{-3/2} * exp(-(ln x)^2 / (2t))
    """
    t = _check_positive_time(t)
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("lognormal density requires x > 0")
    lx = np.log(x)
    out = np.exp(-t / 8.0 - _LOG_SQRT_2PI - 0.5 * np.log(t) - 1.5 * lx - lx * lx / (2.0 * t))
    return out[()] if out.ndim == 0 else out


def gaussian_density(t, y):
    """Centred Gaussian density with variance ``t``."""
    t = _check_positive_time(t)
    y = np.asarray(y, dtype=float)
    out = np.exp(-y * y / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return out[()] if out.ndim == 0 else out


def bs_call(t, k):
    """Call price on unit-vol exponential Brownian motion started at 1.

    Out-of-the-money strikes (k < 1) are priced through put-call parity so
    that deep-in-the-money prices keep their full relative accuracy in the
    time-value part.
    """
    t = np.asarray(t, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(~(k > 0)):
        raise DomainError("strike must be positive")
    if np.any(t < 0):
        raise DomainError("t must be non-negative")
    shape = np.broadcast_shapes(t.shape, k.shape)
    t, k = (np.broadcast_to(v, shape).ravel() for v in (t, k))
    out = np.maximum(1.0 - k, 0.0)
    live = t > 0
    if np.any(live):
        st = np.sqrt(t[live])
        kk = k[live]
        d_plus = -np.log(kk) / st + 0.5 * st
        d_minus = d_plus - st
        call = norm_cdf(d_plus) - kk * norm_cdf(d_minus)
        put = kk * norm_cdf(-d_minus) - norm_cdf(-d_plus)
        out[live] = np.where(kk >= 1.0, call, put + (1.0 - kk))
    return out.reshape(shape)[()]


def bachelier_call(t, k, x0: float = 0.0):
    """Call price on unit-vol Brownian motion started at ``x0``."""
    t = np.asarray(t, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be non-negative")
    shape = np.broadcast_shapes(t.shape, k.shape)
    t, k = (np.broadcast_to(v, shape).ravel() for v in (t, k))
    m = x0 - k
    out = np.maximum(m, 0.0)
    live = t > 0
    if np.any(live):
        st = np.sqrt(t[live])
        z = m[live] / st
        # E[(x0 + W_t - k)^+] = m Phi(z) + sqrt(t) phi(z); OTM side via parity.
        phi = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        otm = st * phi - np.abs(m[live]) * norm_cdf(-np.abs(z))
        out[live] = np.maximum(m[live], 0.0) + otm
    return out.reshape(shape)[()]


def call_from_density(
    density: Callable[[float], float],
    k: float,
    x0: float,
    *,
    support: Tuple[float, float],
    log_axis: bool = False,
    rtol: float = 1e-9,
    atol: float = 1e-14,
    limit: int = 200,
) -> float:
    """Price a call on a density with mean ``x0`` by adaptive quadrature.

    Only the out-of-the-money side is integrated; for ``k < x0`` the price
    is ``(x0 - k) + E[(k - X)^+]``. ``support`` is the truncated state
    interval (in state coordinates even when ``log_axis`` is set).

    Raises
    ------
    QuadratureError
        If scipy's QUADPACK reports non-convergence or an error estimate
        above ``max(rtol * |value|, atol)``.
    """
    lo, hi = support
    if log_axis:
        if k <= 0:
            return x0 - k
        ulo, uhi, uk = math.log(lo), math.log(hi), math.log(k)
        if k >= x0:
            a, b = max(uk, ulo), uhi
            fn = lambda u: (math.exp(u) - k) * density(math.exp(u)) * math.exp(u)  # noqa: E731
        else:
            a, b = ulo, min(uk, uhi)
            fn = lambda u: (k - math.exp(u)) * density(math.exp(u)) * math.exp(u)  # noqa: E731
    else:
        if k >= x0:
            a, b = max(k, lo), hi
            fn = lambda z: (z - k) * density(z)  # noqa: E731
        else:
            a, b = lo, min(k, hi)
            fn = lambda z: (k - z) * density(z)  # noqa: E731

    value = 0.0
    if b > a:
        value, err, info = integrate.quad(
            fn, a, b, epsabs=atol * 1e-2, epsrel=rtol * 1e-2, limit=limit, full_output=True
        )[:3]
        if err > max(rtol * abs(value), atol):
            raise QuadratureError(f"quadrature error {err:.3g} exceeds tolerance at k={k}")
    return value + max(x0 - k, 0.0)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def otm_call_grid(
    density: Callable[[np.ndarray], np.ndarray],
    strikes,
    x0: float,
    scale: float,
    *,
    log_axis: bool,
    panels: int = 12,
    width: float = 12.0,
    otm: bool = False,
) -> np.ndarray:
    """Vectorised call prices for many strikes by composite Gauss-Legendre.

    Each strike integrates its own out-of-the-money side over
    ``width * scale`` beyond the strike or the mean, whichever is further, so
    deep-tail prices keep relative accuracy. ``scale`` is the standard
    deviation of the integration variable (log-state when ``log_axis``).
    With ``otm=True`` the out-of-the-money option values (puts below x0) are
    returned without the intrinsic part.
    """
    k = np.atleast_1d(np.asarray(strikes, dtype=float))
    xk = np.log(k) if log_axis else k
    xm = math.log(x0) if log_axis else x0
    is_call = k >= x0
    # Put side integrates down from the strike, call side up from it.
    far = np.where(is_call, np.maximum(xk, xm) + width * scale, np.minimum(xk, xm) - width * scale)
    a = np.where(is_call, xk, far)
    b = np.where(is_call, far, xk)

    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    s = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()

    span = (b - a)[:, None]
    u = a[:, None] + span * s[None, :]
    z = np.exp(u) if log_axis else u
    jac = span * (z if log_axis else 1.0)
    payoff = np.where(is_call[:, None], z - k[:, None], k[:, None] - z)
    vals = (payoff * density(z) * jac) @ w
    return vals if otm else vals + np.maximum(x0 - k, 0.0)


@dataclass(frozen=True)
class DiffusionLaw:
    """Analytic data of a time-homogeneous martingale diffusion dX = sigma(X) dB.

    Subclasses provide the density family; this base class supplies the
    generic quadrature-backed operations.
    """

    name: str
    x0: float
    interval: Tuple[float, float]

    @property
    def positive(self) -> bool:
        """True for laws living on (0, inf); these use log-space grids."""
        return self.interval[0] == 0.0

    def sigma(self, y):
        raise NotImplementedError

    def log_density(self, t, y):
        raise NotImplementedError

    def density(self, t, y):
        return np.exp(self.log_density(t, y))

    def cdf(self, t, y):
        raise NotImplementedError

    def call(self, t, k):
        raise NotImplementedError

    def scale(self, t) -> float:
        """Standard deviation of the integration coordinate at time t."""
        return math.sqrt(t)

    def support(self, t: float, width: float = SUPPORT_WIDTH) -> Tuple[float, float]:
        raise NotImplementedError

    def state_grid(self, t: float, n: int = 201, width: float = 6.0) -> np.ndarray:
        """``n`` states covering +-``width`` standard deviations around x0."""
        s = width * self.scale(t)
        if self.positive:
            return self.x0 * np.exp(np.linspace(-s, s, n))
        return self.x0 + np.linspace(-s, s, n)

    def expect(self, fn: Callable, t: float, density: Callable | None = None,
               rtol: float = 1e-12) -> float:
        """E[fn(X_t)] under ``density`` (default: this law's) by adaptive quadrature."""
        dens = density if density is not None else (lambda y: self.density(t, y))
        lo, hi = self.support(t)
        if self.positive:
            g = lambda u: fn(math.exp(u)) * dens(math.exp(u)) * math.exp(u)  # noqa: E731
            lo, hi = math.log(lo), math.log(hi)
            mid = math.log(self.x0)
        else:
            g = lambda y: fn(y) * dens(y)  # noqa: E731
            mid = self.x0
        value, err = integrate.quad(g, lo, hi, points=[mid], epsabs=1e-15, epsrel=rtol, limit=400)
        if err > max(1e-9 * abs(value), 1e-13):
            raise QuadratureError(f"moment quadrature error {err:.3g}")
        return value

    def call_quad(self, t: float, k: float, density: Callable | None = None) -> float:
        """Call price E[(X_t - k)^+] by adaptive quadrature of ``density``."""
        if t == 0 and density is None:
            return max(self.x0 - k, 0.0)
        dens = density if density is not None else (lambda y: self.density(t, y))
        return call_from_density(dens, k, self.x0, support=self.support(t), log_axis=self.positive)

    def call_grid(self, t: float, strikes, density: Callable | None = None,
                  otm: bool = False) -> np.ndarray:
        """Vectorised Gauss-Legendre call prices; see :func:`otm_call_grid`."""
        dens = density if density is not None else (lambda y: self.density(t, y))
        return otm_call_grid(dens, strikes, self.x0, self.scale(t), log_axis=self.positive, otm=otm)


@dataclass(frozen=True)
class ExponentialBMLaw(DiffusionLaw):
    name: str = "ebm"
    x0: float = 1.0
    interval: Tuple[float, float] = (0.0, math.inf)

    def sigma(self, y):
        return np.asarray(y, dtype=float)

    def log_density(self, t, y):
        t = _check_positive_time(t)
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(y)
            out = -t / 8.0 - _LOG_SQRT_2PI - 0.5 * np.log(t) - 1.5 * lx - lx * lx / (2.0 * t)
        out = np.where(y > 0, out, -np.inf)
        return out[()] if out.ndim == 0 else out

    def density(self, t, y):
        y = np.asarray(y, dtype=float)
        if np.all(y > 0):
            return lognormal_density(t, y)
        return np.exp(self.log_density(t, y))

    def cdf(self, t, y):
        t = _check_positive_time(t)
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            z = (np.log(np.maximum(y, 0.0)) + 0.5 * t) / np.sqrt(t)
        return norm_cdf(z)

    def call(self, t, k):
        return bs_call(t, k)

    def support(self, t: float, width: float = SUPPORT_WIDTH) -> Tuple[float, float]:
        # Covers the size-biased laws x f_t and x^2 f_t (log-means t/2, 3t/2).
        st = math.sqrt(t)
        return (self.x0 * math.exp(-0.5 * t - width * st),
                self.x0 * math.exp(1.5 * t + width * st))


@dataclass(frozen=True)
class BrownianLaw(DiffusionLaw):
    name: str = "bm"
    x0: float = 0.0
    interval: Tuple[float, float] = (-math.inf, math.inf)

    def sigma(self, y):
        return np.ones_like(np.asarray(y, dtype=float))

    def log_density(self, t, y):
        t = _check_positive_time(t)
        y = np.asarray(y, dtype=float) - self.x0
        out = -_LOG_SQRT_2PI - 0.5 * np.log(t) - y * y / (2.0 * t)
        return out[()] if out.ndim == 0 else out

    def density(self, t, y):
        return gaussian_density(t, np.asarray(y, dtype=float) - self.x0)

    def cdf(self, t, y):
        t = _check_positive_time(t)
        return norm_cdf((np.asarray(y, dtype=float) - self.x0) / np.sqrt(t))

    def call(self, t, k):
        return bachelier_call(t, k, self.x0)

    def support(self, t: float, width: float = SUPPORT_WIDTH) -> Tuple[float, float]:
        s = width * math.sqrt(t)
        return (self.x0 - s, self.x0 + s)


def get_law(name: str) -> DiffusionLaw:
    """Look up a shipped law by its CLI name (``ebm`` or ``bm``)."""
    laws = {"ebm": ExponentialBMLaw, "bm": BrownianLaw}
    try:
        return laws[name]()
    except KeyError:
        raise ValueError(f"unknown law {name!r}; expected one of {sorted(laws)}") from None
