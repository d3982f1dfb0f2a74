import json
import math

import numpy as np
import pytest
from scipy import stats

from fakemart.laws import bachelier_call, bs_call
from fakemart.mixture import residual_call
from fakemart.simulate import PathGrid, RNGConfig, sample_x_exact
from fakemart.verify import (
    VerificationConfig,
    convex_order_check,
    full_verification,
    ks_critical,
    ks_test,
    pde_vs_quadrature,
    solve_dupire,
    surface_invariants,
)

from conftest import make_spec

# Measured ratios of max interior error for (201 x 200) vs (401 x 400)
# grids: 4.70 (ebm) and 3.98 (bm). Frozen lower bound from a second-order
# scheme.
CONVERGENCE_FACTOR = 3.0


def test_ks_test_matches_scipy():
    x = np.random.default_rng(0).normal(size=500)
    d, p = ks_test(x, stats.norm.cdf)
    ref = stats.kstest(x, stats.norm.cdf, method="asymp")
    assert d == pytest.approx(ref.statistic, rel=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=1e-6)


def test_ks_test_against_own_ecdf():
    x = np.random.default_rng(1).exponential(size=200)
    srt = np.sort(x)
    d, _ = ks_test(x, lambda v: np.searchsorted(srt, v, side="right") / srt.size)
    assert d <= 1.0 / 200 + 1e-15


def test_ks_test_empty():
    with pytest.raises(ValueError):
        ks_test([], stats.norm.cdf)


def test_ks_exact_lognormal_and_negative_control(ebm_spec):
    n = 50_000
    ens = sample_x_exact(ebm_spec.law, PathGrid(1.0, 1), n, RNGConfig(seed=42))
    x = ens.at(1.0)
    d, _ = ks_test(x, lambda v: ebm_spec.law.cdf(1.0, v))
    assert d < 1.63 / math.sqrt(n)
    _, p = ks_test(x, lambda v: stats.norm.cdf(v, loc=1.0, scale=1.0))
    assert p < 1e-10


def test_ks_critical():
    assert ks_critical(0.01, 50_000) == pytest.approx(1.6276 / math.sqrt(50_000), rel=1e-4)
    assert ks_critical(1e-6, 10_000) == pytest.approx(stats.kstwobign.isf(1e-6) / 100, rel=1e-10)


def test_dupire_degenerate_case_is_black_scholes():
    spec = make_spec("ebm", 0.5, 1e-12)
    s = solve_dupire(spec, 1.0)
    inner = s.values[-1, s.interior]
    assert np.max(np.abs(inner - bs_call(1.0, s.states[s.interior]))) < 5e-4


def test_dupire_vs_quadrature(ebm_spec):
    s = solve_dupire(ebm_spec, 1.0)
    assert s.values.shape == (401, 401)
    assert pde_vs_quadrature(ebm_spec, s) < 1e-3
    # Domain is x0 exp(-+6 sqrt(L^2 T)); C(t, y -> 0) -> x0 along the bottom.
    assert s.states[0] == pytest.approx(math.exp(-6 * math.sqrt(2.0)), rel=1e-12)
    np.testing.assert_allclose(s.values[:, 0], 1.0, atol=3e-4)
    np.testing.assert_allclose(s.values[:, :5], np.broadcast_to(1.0 - s.states[:5], (401, 5)), atol=1e-12)
    np.testing.assert_allclose(s.values[:, -1], 0.0)


@pytest.mark.parametrize("args", [("ebm", 0.5, 0.25), ("bm", 0.5, 0.25)])
def test_dupire_convergence_order(args):
    spec = make_spec(*args)
    coarse = pde_vs_quadrature(spec, solve_dupire(spec, 1.0, 201, 200))
    fine = pde_vs_quadrature(spec, solve_dupire(spec, 1.0, 401, 400))
    assert coarse / fine >= CONVERGENCE_FACTOR


def test_surface_invariants(ebm_spec, bm_spec):
    for spec in (ebm_spec, bm_spec):
        inv = surface_invariants(solve_dupire(spec, 1.0), spec)
        assert set(inv) == {"initial", "convexity", "t_monotone", "lower", "band"}
        assert min(inv.values()) >= 0


def test_bm_band_matches_J(bm_spec):
    s = solve_dupire(bm_spec, 1.0)
    J = bachelier_call(bm_spec.L2, 0.0) / (1 - bm_spec.c)
    excess = s.values - np.maximum(-s.states, 0.0)
    assert np.max(excess) <= J
    # The largest time value sits at the money: the residual call price.
    assert np.max(excess) == pytest.approx(residual_call(bm_spec, 1.0, 0.0), rel=1e-3)


def test_rannacher_validation(ebm_spec):
    with pytest.raises(ValueError):
        solve_dupire(ebm_spec, 1.0, 11, 10, rannacher=11)
    with pytest.raises(ValueError):
        solve_dupire(ebm_spec, 0.0)


@pytest.mark.parametrize("args", [("ebm", 0.5, 0.25), ("ebm", 0.5, 0.49)])
def test_convex_order(args):
    res = convex_order_check(make_spec(*args))
    assert res["integrand_min"] > 0
    assert res["fd_min"] > 0
    assert res["fd_rel_err"] < 1e-5


def test_low_power_warnings(ebm_spec):
    rep = full_verification(ebm_spec, VerificationConfig(n_paths=100, n_steps=100))
    names = [c.check for c in rep.checks]
    assert len(names) == len(set(names))
    assert rep.checks[0].status == "warning"
    assert all(c.status != "fail" for c in rep.checks)
    assert rep.all_passed
    d = json.loads(rep.to_json())
    assert set(d) == {"config", "checks", "all_passed"}
    assert {"check", "statistic", "threshold", "passed", "status", "detail"} == set(d["checks"][0])
    assert d["config"]["seed"] == 42 and d["config"]["grids"]["pde"] == [401, 400]


def test_corrupted_eta_is_caught(ebm_spec):
    rep = full_verification(ebm_spec, VerificationConfig(n_paths=10_000, n_steps=100, eta_scale=1.5))
    by = {c.check: c for c in rep.checks}
    assert by["mixture_identity"].passed
    assert not by["mc_marginal_ks_t=1"].passed
    assert not rep.all_passed


def test_budget_scaling():
    cfg = VerificationConfig()
    assert cfg.budget_factor(make_spec("ebm", 0.5, 0.25)) == 1
    assert cfg.budget_factor(make_spec("ebm", 0.5, 0.49)) == 5
    assert VerificationConfig(auto_scale=False).budget_factor(make_spec("ebm", 0.5, 0.49)) == 1


def test_configuration_errors(ebm_spec):
    with pytest.raises(ValueError):
        full_verification(ebm_spec, VerificationConfig(n_steps=3))
    with pytest.raises(ValueError):
        full_verification(ebm_spec, VerificationConfig(n_paths=1))
