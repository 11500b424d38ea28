import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special as sps

from pamlab.special import (
    SERIES_SWITCH_OFFSET,
    DomainError,
    EtaParam,
    ModelParams,
    alpha_of_eta,
    bessel_i,
    bessel_transition_density,
    bridge_exp_moment_bound,
    bridge_exp_moment_exact,
    calibrate_bound_constant,
    cap_radius,
    heat_kernel,
    log_bessel_i,
    mollified_g,
    mollified_h,
    riesz_constant,
    riesz_self_convolution,
)

mpmath.mp.dps = 40


def q3_closed(t, a, b):
    # half-integer order: I_{1/2}(z) = sqrt(2/(pi z)) sinh z
    return (b / a) / math.sqrt(2 * math.pi * t) * (
        math.exp(-(a - b) ** 2 / (2 * t)) - math.exp(-(a + b) ** 2 / (2 * t)))


def bridge_moment_mp(d, eta, a, b, t):
    # Yor: E[exp(eta int R^-2) | R_t = b] = I_mu(ab/t) / I_nu(ab/t), mu^2 = nu^2 - 2 eta
    nu = mpmath.mpf(d - 2) / 2
    mu = mpmath.sqrt(nu ** 2 - 2 * mpmath.mpf(eta))
    z = mpmath.mpf(a) * b / t
    return float(mpmath.besseli(mu, z) / mpmath.besseli(nu, z))


def test_alpha_golden():
    assert alpha_of_eta(3, 0.08) == pytest.approx(0.2, abs=1e-15)
    assert alpha_of_eta(3, 0.0) == 0.0
    assert alpha_of_eta(3, 0.125) == pytest.approx(0.5)


def test_alpha_domain():
    with pytest.raises(DomainError):
        alpha_of_eta(3, 0.2)
    with pytest.raises(DomainError):
        alpha_of_eta(2, 0.0)
    with pytest.raises(DomainError):
        alpha_of_eta(3, -0.01)


def test_model_params_derives_alpha():
    p = ModelParams(3, 0.4)
    assert p.alpha == pytest.approx(0.5 - math.sqrt(0.25 - 0.16))
    assert p.eta == pytest.approx(0.08)
    assert EtaParam(3, p.eta).alpha == pytest.approx(p.alpha, rel=1e-14)


@pytest.mark.parametrize("d,kappa", [(3, 0.5), (3, 0.0), (3, -0.1), (2, 0.1), (3.5, 0.1)])
def test_model_params_rejects(d, kappa):
    with pytest.raises(DomainError) as exc:
        ModelParams(d, kappa)
    assert "Eq" not in str(exc.value)


def test_unchecked_null():
    p = ModelParams.unchecked(3, 0.0)
    assert p.kappa == 0.0 and p.alpha == 0.0


@given(st.floats(3, 8), st.floats(0, 1))
def test_alpha_monotone_and_bounded(d, frac):
    eta_max = (d - 2) ** 2 / 8
    a1 = alpha_of_eta(d, frac * eta_max * 0.5)
    a2 = alpha_of_eta(d, frac * eta_max)
    assert 0 <= a1 <= a2 <= (d - 2) / 2 + 1e-12


@given(st.floats(0, 0.125))
def test_alpha_solves_quadratic(eta):
    a = alpha_of_eta(3, eta)
    # alpha^2 - (d-2) alpha + 2 eta = 0
    assert a * a - a + 2 * eta == pytest.approx(0.0, abs=1e-12)


def test_heat_kernel_normalized():
    x = np.linspace(-8, 8, 801)
    g = heat_kernel(1, 1.3, x[:, None])
    assert np.trapezoid(g, x) == pytest.approx(1.0, rel=1e-10)
    with pytest.raises(DomainError):
        heat_kernel(3, 0.0, [0, 0, 0])


@pytest.mark.parametrize("nu,z", [(0.0, 1e-3), (0.5, 1.0), (1.0, 10.0), (0.3, 20.0), (0.5, 20.6),
                                  (1.5, 50.0), (0.2, 300.0), (4.0, 1e4)])
def test_log_bessel_against_mpmath(nu, z):
    ref = float(mpmath.log(mpmath.besseli(nu, z)))
    assert log_bessel_i(nu, z) == pytest.approx(ref, rel=1e-13, abs=1e-13)


@given(st.floats(0, 6), st.floats(1e-3, 600))
def test_log_bessel_against_scipy_ive(nu, z):
    ref = math.log(sps.ive(nu, z)) + z
    assert log_bessel_i(nu, z) == pytest.approx(ref, rel=1e-10, abs=1e-10)


@given(st.floats(0, 5))
def test_bessel_switch_continuity(nu):
    z0 = nu + SERIES_SWITCH_OFFSET
    lo, hi = log_bessel_i(nu, z0), log_bessel_i(nu, z0 * (1 + 1e-12) + 1e-12)
    assert abs(hi - lo) < 1e-9


def test_bessel_small_values():
    assert log_bessel_i(0.0, 0.0) == 0.0
    assert log_bessel_i(1.0, 0.0) == -math.inf
    assert bessel_i(0.5, 1.0) == pytest.approx(math.sqrt(2 / math.pi) * math.sinh(1.0), rel=1e-14)
    with pytest.raises(DomainError):
        log_bessel_i(-1.0, 1.0)


def test_transition_density_golden():
    assert bessel_transition_density(3, 1, 1, 1) == pytest.approx(0.344954, abs=1e-5)
    assert bessel_transition_density(3, 1, 1, 1) == pytest.approx(q3_closed(1, 1, 1), rel=1e-13)


@given(st.floats(0.05, 5), st.floats(0.05, 5), st.floats(0.05, 5))
def test_transition_density_half_integer(t, a, b):
    assert bessel_transition_density(3, t, a, b) == pytest.approx(q3_closed(t, a, b), rel=1e-10)


@pytest.mark.parametrize("d", [3.0, 3.7, 5.0])
def test_transition_density_normalized(d):
    from scipy import integrate

    val, _ = integrate.quad(lambda b: bessel_transition_density(d, 0.7, 1.2, b), 1e-12, 20, limit=200)
    assert val == pytest.approx(1.0, rel=1e-9)


def test_bridge_moment_golden():
    assert bridge_exp_moment_exact(3, 0.1, 1, 1, 1) == pytest.approx(bridge_moment_mp(3, 0.1, 1, 1, 1), rel=1e-8)
    assert bridge_exp_moment_exact(3, 0.1, 1, 1, 1) == pytest.approx(1.2175696020780664, rel=1e-12)
    assert bridge_exp_moment_exact(3, 0.0, 1, 2, 3) == 1.0


@given(st.floats(0.01, 0.125), st.floats(0.05, 30), st.floats(0.05, 30), st.floats(0.01, 10))
def test_bridge_moment_against_mpmath(eta, a, b, t):
    ref = bridge_moment_mp(3, eta, a, b, t)
    assert bridge_exp_moment_exact(3, eta, a, b, t) == pytest.approx(ref, rel=1e-9)


@given(st.floats(0.05, 5), st.floats(0.05, 5), st.floats(0.05, 5))
def test_bridge_moment_monotone_in_eta(a, b, t):
    vals = [bridge_exp_moment_exact(3, e, a, b, t) for e in (0.0, 0.03, 0.08, 0.12)]
    assert all(x <= y * (1 + 1e-12) for x, y in zip(vals, vals[1:]))
    assert vals[0] == 1.0


def test_bridge_moment_large_argument_finite():
    # ab/t = 1e6: naive Bessel ratios overflow
    v = bridge_exp_moment_exact(3, 0.1, 1000.0, 1000.0, 1.0)
    assert math.isfinite(v) and v == pytest.approx(1.0, abs=1e-6)


def test_envelope_dominates():
    c = calibrate_bound_constant(3, 0.08, points=13)
    p = ModelParams(3, 0.4)
    for a, b, t in [(0.1, 0.2, 1.0), (1.0, 1.0, 1.0), (3.0, 0.5, 0.1), (0.01, 0.01, 5.0)]:
        x, y = [a, 0, 0], [0, b, 0]
        assert bridge_exp_moment_exact(3, 0.08, a, b, t) <= bridge_exp_moment_bound(p, x, y, t, c) * (1 + 1e-12)
    assert bridge_exp_moment_bound(p, [0, 0, 0], [1, 0, 0], 1.0, c) == math.inf
    with pytest.raises(DomainError):
        bridge_exp_moment_bound(p, [1, 0, 0], [1, 0, 0], 1.0, 0.0)


@pytest.mark.parametrize("d", [3, 4, 5])
def test_riesz_constant_two_routes(d):
    for rho in (0.5, 1.0, 2.0):
        assert riesz_self_convolution(d, rho) * rho**2 == pytest.approx(1.0, rel=1e-7)


def test_mollifier_cap():
    eps = 0.1
    rc = cap_radius(3, eps)
    assert mollified_g(3, eps, 0.0) == pytest.approx(1 / eps)
    assert mollified_g(3, eps, rc) == pytest.approx(1 / eps, rel=1e-12)
    assert mollified_g(3, eps, 2 * rc) < 1 / eps
    assert rc > eps  # the cap sits well outside eps


def test_mollified_h_routes_agree():
    for rho in (0.05, 0.3, 1.0):
        assert mollified_h(3, 0.1, rho, "radial") == pytest.approx(mollified_h(3, 0.1, rho, "bipolar"), rel=1e-9)


def test_mollified_h_approaches_inverse_square():
    eps = 0.1
    rc = cap_radius(3, eps)
    radii = rc * np.array([4.0, 16.0, 64.0, 256.0])
    deficit = np.array([1 - mollified_h(3, eps, r) * r * r for r in radii])
    assert np.all(deficit > 0) and np.all(np.diff(deficit) < 0)
    # slow (rc/r)^{1/2} approach: each 4x in r halves the deficit
    ratios = deficit[1:] / deficit[:-1]
    assert np.allclose(ratios, 0.5, atol=0.08)


def test_mollified_h_origin_is_max():
    h0 = mollified_h(3, 0.1, 0.0)
    assert h0 >= mollified_h(3, 0.1, 1e-3) * (1 - 1e-9)
    assert h0 > mollified_h(3, 0.1, 0.1)
