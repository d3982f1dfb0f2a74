import numpy as np
import pytest

from fakemart.laws import ExponentialBMLaw
from fakemart.mixture import (
    ClockMonotonicityError,
    ClockSpeedError,
    MixingWeightError,
    RatioBoundError,
    ResidualLaw,
    audit_grid,
    convexity_rate,
    eta_bound_margins,
    eta_sq_over_sigma_sq,
    local_vol_eta,
    residual_call,
    residual_density,
    validate_spec,
)
from fakemart.timechange import TimeChange, make_timechange_ebm, make_timechange_tabulated

from conftest import make_spec

# mpmath reference values for (ebm, K=0.5, c=0.25) at t = 1, y = 1.
H_1_1 = 0.2347102178428663
ETA_SQ_1_1 = 1.653366932887342


def test_residual_density_reference(ebm_spec):
    assert residual_density(ebm_spec, 1.0, 1.0) == pytest.approx(H_1_1, rel=1e-14)


def test_local_vol_reference(ebm_spec, bm_spec):
    assert eta_sq_over_sigma_sq(ebm_spec, 1.0, 1.0) == pytest.approx(ETA_SQ_1_1, rel=1e-14)
    assert local_vol_eta(ebm_spec, 1.0, 1.0) ** 2 == pytest.approx(ETA_SQ_1_1, rel=1e-14)
    # Brownian case at y = 0: r = 1/K, a' = K^2, so (1 - c K)/(1 - c/K) = 1.75.
    assert eta_sq_over_sigma_sq(bm_spec, 1.0, 0.0) == pytest.approx(1.75, rel=1e-14)


@pytest.mark.parametrize("args", [("ebm", 0.5, 0.25), ("ebm", 0.9, 0.5), ("bm", 0.5, 0.25), ("ebm", 0.5, 0.49)])
def test_mixture_identity_on_audit_grid(args):
    spec = make_spec(*args)
    times, states = audit_grid(spec.law)
    t = times[:, None]
    ft = spec.law.density(t, states)
    fa = spec.law.density(spec.tc.a(t), states)
    mix = spec.c * fa + (1 - spec.c) * residual_density(spec, t, states)
    assert np.max(np.abs(mix - ft) / ft) < 1e-14


@pytest.mark.parametrize("args", [("ebm", 0.5, 0.25), ("ebm", 0.9, 0.5), ("bm", 0.5, 0.25), ("ebm", 0.5, 0.49)])
def test_eta_bounds(args):
    spec = make_spec(*args)
    times, states = audit_grid(spec.law)
    lower, upper, cap = eta_bound_margins(spec, times[:, None], states)
    assert np.all(lower >= 0)
    assert np.all(upper > 0)
    assert np.all(cap >= -1e-12 * spec.L2)
    ratio = eta_sq_over_sigma_sq(spec, times[:, None], states)
    assert np.all(ratio >= 1.0) and np.all(ratio <= spec.L2 * (1 + 1e-12))


def test_eta_closed_form_at_x0(ebm_spec):
    for t in (0.1, 1.0, 5.0):
        ad = ebm_spec.tc.a_dot(t)
        closed = (1 - 0.25 * ad / 0.5) / (1 - 0.25 / 0.5)
        assert eta_sq_over_sigma_sq(ebm_spec, t, 1.0) == pytest.approx(closed, abs=1e-12)


def test_L2(ebm_spec):
    assert ebm_spec.L2 == 2.0
    assert make_spec("ebm", 0.5, 0.49).L2 == pytest.approx(50.0)


@pytest.mark.parametrize("t", [0.1, 1.0, 4.0])
def test_residual_mass_and_mean(ebm_spec, bm_spec, t):
    for spec in (ebm_spec, bm_spec):
        rl = ResidualLaw(spec)
        assert rl.mass(t) == pytest.approx(1.0, abs=1e-12)
        assert rl.mean(t) == pytest.approx(spec.law.x0, abs=1e-12)


def test_residual_call_closed_form_vs_quadrature(ebm_spec):
    rl = ResidualLaw(ebm_spec)
    for k in (0.3, 1.0, 2.5):
        assert rl.call_quad(1.0, k) == pytest.approx(residual_call(ebm_spec, 1.0, k), abs=1e-11)


def test_convexity_rate_matches_finite_difference(ebm_spec):
    rl = ResidualLaw(ebm_spec)
    y = ebm_spec.law.state_grid(1.0, 41)
    d = 1e-5
    fd = (rl.call_grid(1 + d, y, otm=True) - rl.call_grid(1 - d, y, otm=True)) / (2 * d)
    np.testing.assert_allclose(fd, convexity_rate(ebm_spec, 1.0, y), rtol=1e-7)


def test_weight_errors():
    law = ExponentialBMLaw()
    tc = make_timechange_ebm(0.5)
    for c in (0.0, -0.1, 0.5, 0.7, float("nan")):
        with pytest.raises(MixingWeightError):
            validate_spec(law, tc, c)


def test_identity_clock_rejected():
    ident = TimeChange(K=0.9, a=lambda t: np.asarray(t, float), a_dot=lambda t: np.ones_like(np.asarray(t, float)),
                       kind="identity")
    with pytest.raises(ClockMonotonicityError):
        validate_spec(ExponentialBMLaw(), ident, 0.25)


def test_fast_clock_rejected():
    # a(t) < t but a' > 1 on part of the grid.
    times = np.array([0.0, 1.0, 2.0, 20.0])
    values = np.array([0.0, 0.2, 1.5, 15.0])
    tc = make_timechange_tabulated(times, values, K=0.5)
    with pytest.raises(ClockSpeedError):
        validate_spec(ExponentialBMLaw(), tc, 0.1)


def test_overstated_ratio_bound_rejected():
    real = make_timechange_ebm(0.5)
    claimed = TimeChange(K=0.9, a=real.a, a_dot=real.a_dot, kind="mislabelled")
    with pytest.raises(RatioBoundError):
        validate_spec(ExponentialBMLaw(), claimed, 0.6)


def test_residual_density_nonnegative_near_boundary():
    spec = make_spec("ebm", 0.5, 0.49)
    times, states = audit_grid(spec.law)
    assert np.all(residual_density(spec, times[:, None], states) >= 0)
