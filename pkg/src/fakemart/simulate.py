"""Seeded Monte Carlo paths for X, G = X_{a(t)}, H and the mixture X~.

Noise discipline
----------------
Every path owns a counter-based Philox stream keyed by ``(seed, path_id)``;
the Bernoulli labels Z^c come from a dedicated stream keyed by
``(seed, MIXING_STREAM)``. Paths are processed in fixed-size batches and
batches only write their own rows, so the result is bit-identical for any
number of worker threads.

Normals are drawn at a ``base_steps`` resolution (default: ``n_steps``) and
summed in groups, so runs with 250, 500, ... steps share one Brownian path
per path id when they share ``base_steps``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .laws import BrownianLaw, DiffusionLaw, DomainError, ExponentialBMLaw
from .mixture import FakeSpec, eta_sq_ratio_at

__all__ = [
    "SimulationError",
    "PathGrid",
    "RNGConfig",
    "PathEnsemble",
    "MIXING_STREAM",
    "sample_x_exact",
    "sample_g",
    "sample_h",
    "sample_fake",
    "realized_log_qv",
    "realized_qv",
]

MIXING_STREAM = 2**64 - 1
# |ln H| beyond this means the local volatility is mis-specified.
LOG_EXPLOSION = 50.0


class SimulationError(RuntimeError):
    """A simulated path set left its plausible range, or a law has no sampler."""


@dataclass(frozen=True)
class PathGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be > 0")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * (self.T / self.n_steps)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid node."""
        i = int(round(t / self.dt))
        if not 0 <= i <= self.n_steps or abs(i * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"t = {t} is not on the grid")
        return i


@dataclass(frozen=True)
class RNGConfig:
    seed: int = 42
    batch_size: int = 2048
    workers: int = 1

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def path_generator(self, path_id: int) -> np.random.Generator:
        key = np.array([self.seed, path_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def mixing_generator(self) -> np.random.Generator:
        return self.path_generator(MIXING_STREAM)

    def normals(self, path_ids: np.ndarray, n: int) -> np.ndarray:
        out = np.empty((len(path_ids), n))
        for row, pid in enumerate(path_ids):
            out[row] = self.path_generator(int(pid)).standard_normal(n)
        return out


@dataclass
class PathEnsemble:
    """Simulated paths recorded on a subset of the step grid.

    ``qv`` is the realized quadratic variation accumulated over every step
    (of ln X for positive laws, of X otherwise), whatever the recording
    stride. ``grid_sum``/``grid_sumsq`` hold per-time sums over all paths at
    full step resolution.
    """

    grid: PathGrid
    record_idx: np.ndarray
    values: np.ndarray
    component: np.ndarray
    seed: int
    scheme: str
    law_name: str
    qv: np.ndarray
    grid_sum: np.ndarray = field(repr=False)
    grid_sumsq: np.ndarray = field(repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[self.record_idx]

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def at(self, t: float) -> np.ndarray:
        """Values of all paths at recorded time ``t``."""
        i = self.grid.index_of(t)
        pos = np.searchsorted(self.record_idx, i)
        if pos >= len(self.record_idx) or self.record_idx[pos] != i:
            raise ValueError(f"t = {t} was not recorded")
        return self.values[:, pos]

    def grid_mean(self) -> np.ndarray:
        return self.grid_sum / self.n_paths

    def grid_std(self) -> np.ndarray:
        n = self.n_paths
        var = (self.grid_sumsq - self.grid_sum**2 / n) / max(n - 1, 1)
        return np.sqrt(np.maximum(var, 0.0))


def _record_idx(grid: PathGrid, record_every: int) -> np.ndarray:
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    idx = np.arange(0, grid.n_steps + 1, record_every)
    if idx[-1] != grid.n_steps:
        idx = np.append(idx, grid.n_steps)
    return idx


def _increments(rng: RNGConfig, ids: np.ndarray, n_steps: int, base_steps: Optional[int]) -> np.ndarray:
    base = n_steps if base_steps is None else int(base_steps)
    if base % n_steps:
        raise ValueError("base_steps must be a multiple of n_steps")
    m = base // n_steps
    z = rng.normals(ids, base)
    if m > 1:
        z = z.reshape(len(ids), n_steps, m).sum(axis=2) / math.sqrt(m)
    return z


def _run(ids: np.ndarray, rng: RNGConfig, grid: PathGrid, rec: np.ndarray,
         batch_fn: Callable[[np.ndarray], tuple]):
    """Apply ``batch_fn`` to fixed batches of ``ids``; merge in batch order.

    ``batch_fn`` returns (full_paths, qv) for its batch.
    """
    bs = rng.batch_size
    batches = [ids[i:i + bs] for i in range(0, len(ids), bs)]

    def work(b):
        paths, qv = batch_fn(b)
        return paths[:, rec], qv, paths.sum(axis=0), (paths * paths).sum(axis=0)

    if rng.workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=rng.workers) as pool:
            results = list(pool.map(work, batches))
    else:
        results = [work(b) for b in batches]

    n = grid.n_steps + 1
    values = np.empty((len(ids), len(rec)))
    qv = np.empty(len(ids))
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    row = 0
    for vals, q, a, b in results:
        values[row:row + len(q)] = vals
        qv[row:row + len(q)] = q
        s1 += a
        s2 += b
        row += len(q)
    return values, qv, s1, s2


def _exact_paths(law: DiffusionLaw, clock_times: np.ndarray, z: np.ndarray):
    """Exact-in-law paths observed at (possibly warped) clock times."""
    ds = np.diff(clock_times)
    sd = np.sqrt(ds)
    n = z.shape[0]
    if isinstance(law, ExponentialBMLaw):
        du = z * sd - 0.5 * ds
        logs = np.empty((n, len(clock_times)))
        logs[:, 0] = math.log(law.x0)
        np.cumsum(du, axis=1, out=logs[:, 1:])
        logs[:, 1:] += math.log(law.x0)
        return np.exp(logs), np.sum(du * du, axis=1)
    if isinstance(law, BrownianLaw):
        dx = z * sd
        paths = np.empty((n, len(clock_times)))
        paths[:, 0] = law.x0
        np.cumsum(dx, axis=1, out=paths[:, 1:])
        paths[:, 1:] += law.x0
        return paths, np.sum(dx * dx, axis=1)
    raise SimulationError(f"no exact sampler for law {law.name!r}")


def _scheme_for(law: DiffusionLaw) -> str:
    return "log-euler" if law.positive else "euler"


def sample_x_exact(law: DiffusionLaw, grid: PathGrid, n_paths: int, rng: RNGConfig, *,
                   record_every: int = 1, base_steps: Optional[int] = None,
                   path_ids: Optional[np.ndarray] = None) -> PathEnsemble:
    """Exact paths of the reference diffusion X on ``grid``."""
    return _sample_clocked(law, grid.times, grid, n_paths, rng, "X-exact",
                           record_every, base_steps, path_ids)


def sample_g(spec: FakeSpec, grid: PathGrid, n_paths: int, rng: RNGConfig, *,
             record_every: int = 1, base_steps: Optional[int] = None,
             path_ids: Optional[np.ndarray] = None) -> PathEnsemble:
    """Exact paths of G_t = X_{a(t)}: X sampled on the warped grid a(t_i)."""
    warped = np.asarray(spec.tc.a(grid.times), dtype=float)
    return _sample_clocked(spec.law, warped, grid, n_paths, rng, "G",
                           record_every, base_steps, path_ids)


def _sample_clocked(law, clock_times, grid, n_paths, rng, label, record_every, base_steps, path_ids):
    ids = np.arange(n_paths) if path_ids is None else np.asarray(path_ids)
    rec = _record_idx(grid, record_every)

    def batch(b):
        z = _increments(rng, b, grid.n_steps, base_steps)
        return _exact_paths(law, clock_times, z)

    values, qv, s1, s2 = _run(ids, rng, grid, rec, batch)
    return PathEnsemble(grid=grid, record_idx=rec, values=values,
                        component=np.full(len(ids), label), seed=rng.seed, scheme="exact",
                        law_name=law.name, qv=qv, grid_sum=s1, grid_sumsq=s2)


def sample_h(spec: FakeSpec, grid: PathGrid, n_paths: int, rng: RNGConfig, *,
             record_every: int = 1, base_steps: Optional[int] = None,
             path_ids: Optional[np.ndarray] = None,
             eta_scale: float = 1.0) -> PathEnsemble:
    """Paths of the residual diffusion dH = eta(t, H) dB.

    Positive laws step ln H with the drift-corrected log-Euler scheme,
    real-line laws step H with Euler; eta is frozen at the left end of each
    step, and the first step (from t = 0) uses eta at the first grid time.

    ``eta_scale`` multiplies eta and exists for negative-control runs only.

    Raises
    ------
    SimulationError
        If any |ln H| exceeds 50 (positive laws) or any |H - x0| exceeds
        50 sqrt(L^2 T) (real-line laws).
    """
    law = spec.law
    ids = np.arange(n_paths) if path_ids is None else np.asarray(path_ids)
    rec = _record_idx(grid, record_every)
    times = grid.times
    dt = grid.dt
    eval_t = np.maximum(times[:-1], times[1])
    a_t = np.asarray(spec.tc.a(eval_t), dtype=float)
    ad_t = np.asarray(spec.tc.a_dot(eval_t), dtype=float)
    scale2 = eta_scale * eta_scale
    positive = law.positive
    bound = LOG_EXPLOSION if positive else LOG_EXPLOSION * math.sqrt(spec.L2 * grid.T)

    def batch(b):
        z = _increments(rng, b, grid.n_steps, base_steps)
        n = len(b)
        paths = np.empty((n, grid.n_steps + 1))
        qv = np.zeros(n)
        if positive:
            u = np.full(n, math.log(law.x0))
            paths[:, 0] = law.x0
            for i in range(grid.n_steps):
                y = np.exp(u)
                s = law.sigma(y) / y
                v = scale2 * s * s * eta_sq_ratio_at(spec, eval_t[i], a_t[i], ad_t[i], y)
                du = np.sqrt(v * dt) * z[:, i] - 0.5 * v * dt
                u += du
                qv += du * du
                if np.max(np.abs(u)) > bound:
                    raise SimulationError(f"|ln H| exceeded {bound} at t = {times[i + 1]:.4g}")
                paths[:, i + 1] = np.exp(u)
        else:
            x = np.full(n, float(law.x0))
            paths[:, 0] = law.x0
            for i in range(grid.n_steps):
                s = law.sigma(x)
                v = scale2 * s * s * eta_sq_ratio_at(spec, eval_t[i], a_t[i], ad_t[i], x)
                dx = np.sqrt(v * dt) * z[:, i]
                x = x + dx
                qv += dx * dx
                if np.max(np.abs(x - law.x0)) > bound:
                    raise SimulationError(f"|H - x0| exceeded {bound:.3g} at t = {times[i + 1]:.4g}")
                paths[:, i + 1] = x
        return paths, qv

    values, qv, s1, s2 = _run(ids, rng, grid, rec, batch)
    return PathEnsemble(grid=grid, record_idx=rec, values=values,
                        component=np.full(len(ids), "H"), seed=rng.seed, scheme=_scheme_for(law),
                        law_name=law.name, qv=qv, grid_sum=s1, grid_sumsq=s2)


def sample_fake(spec: FakeSpec, grid: PathGrid, n_paths: int, rng: RNGConfig, *,
                record_every: int = 1, base_steps: Optional[int] = None,
                eta_scale: float = 1.0) -> PathEnsemble:
    """The mixture X~ = G 1{Z=1} + H 1{Z=0} with P(Z = 1) = c.

    Z is drawn once per path, before any stepping, from the mixing stream.
    """
    is_g = rng.mixing_generator().random(n_paths) < spec.c
    ids = np.arange(n_paths)
    g = sample_g(spec, grid, 0, rng, record_every=record_every, base_steps=base_steps,
                 path_ids=ids[is_g])
    h = sample_h(spec, grid, 0, rng, record_every=record_every, base_steps=base_steps,
                 path_ids=ids[~is_g], eta_scale=eta_scale)
    values = np.empty((n_paths, len(g.record_idx)))
    values[is_g] = g.values
    values[~is_g] = h.values
    qv = np.empty(n_paths)
    qv[is_g] = g.qv
    qv[~is_g] = h.qv
    component = np.where(is_g, "G", "H")
    return PathEnsemble(grid=grid, record_idx=g.record_idx, values=values, component=component,
                        seed=rng.seed, scheme=f"exact+{_scheme_for(spec.law)}",
                        law_name=spec.law.name, qv=qv,
                        grid_sum=g.grid_sum + h.grid_sum, grid_sumsq=g.grid_sumsq + h.grid_sumsq)


def realized_log_qv(ensemble: PathEnsemble) -> np.ndarray:
    """Per-path sum of squared log-increments up to the horizon.

    Uses the recorded values when every step was recorded; otherwise the
    quadratic variation accumulated during simulation.
    """
    if np.any(ensemble.values <= 0):
        raise DomainError("log quadratic variation needs positive paths")
    if len(ensemble.record_idx) == ensemble.grid.n_steps + 1:
        d = np.diff(np.log(ensemble.values), axis=1)
        return np.sum(d * d, axis=1)
    return ensemble.qv.copy()


def realized_qv(ensemble: PathEnsemble) -> np.ndarray:
    """Per-path QV on the simulation coordinate (log for positive laws)."""
    if ensemble.law_name == "ebm":
        return realized_log_qv(ensemble)
    if len(ensemble.record_idx) == ensemble.grid.n_steps + 1:
        d = np.diff(ensemble.values, axis=1)
        return np.sum(d * d, axis=1)
    return ensemble.qv.copy()
