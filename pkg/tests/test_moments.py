import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from pamlab.functions import GaussianBump, SmoothBall
from pamlab.moments import (
    DiscreteMeasure,
    _pair_singular_expectation,
    first_moment_exact,
    fit_envelope_constant,
    gaussian_convolution_bound_check,
    h_alpha_norm,
    mollified_pair_table,
    second_moment_bound_rhs,
    second_moment_bridge_rhs,
)
from pamlab.special import DomainError, ModelParams, mollified_h


def gauss_smoothed(f, t, x):
    w2 = f.width**2
    r2 = float(np.sum((np.asarray(x) - f.center) ** 2))
    return f.height * (w2 / (w2 + t)) ** 1.5 * math.exp(-r2 / (2 * (w2 + t)))


def pair_tau_oracle(f, t, xi, xj, alpha):
    # |s|^-alpha = Gamma(alpha/2)^-1 int tau^{alpha/2 - 1} exp(-tau |s|^2) dtau; the inner
    # expectation over z = (Z1, Z2) ~ N(0, I_6) is a Gaussian integral in closed form
    d = 3
    st_ = math.sqrt(t)
    w2 = f.width**2
    a1, a2 = np.asarray(xi) - f.center, np.asarray(xj) - f.center
    s0 = np.asarray(xi) - np.asarray(xj)

    def inner(tau):
        # exponent -1/2 z'Az + b'z + c
        A = np.zeros((6, 6))
        A[:3, :3] += t / w2 * np.eye(3)
        A[3:, 3:] += t / w2 * np.eye(3)
        M = np.block([[np.eye(3), -np.eye(3)], [-np.eye(3), np.eye(3)]])
        A += 2 * tau * t * M
        b = np.concatenate([-st_ * a1 / w2, -st_ * a2 / w2]) - 2 * tau * st_ * np.concatenate([s0, -s0])
        c = -(a1 @ a1 + a2 @ a2) / (2 * w2) - tau * (s0 @ s0)
        S = np.eye(6) + A
        return f.height**2 * np.linalg.det(S) ** -0.5 * math.exp(0.5 * b @ np.linalg.solve(S, b) + c)

    val, _ = integrate.quad(lambda tau: tau ** (alpha / 2 - 1) * inner(tau), 0, np.inf, limit=400, epsrel=1e-10)
    return val / math.gamma(alpha / 2)


def test_h_alpha_norm_atoms():
    mu = DiscreteMeasure.from_atoms([((0, 0, 0), 1.0), ((1, 0, 0), 1.0)])
    assert h_alpha_norm(mu, 0.3) == math.inf
    assert h_alpha_norm(mu, 0.3, include_self=False) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        h_alpha_norm(mu, 3.5, include_self=False)


def test_h_alpha_norm_box_against_mc():
    mu = DiscreteMeasure.lebesgue_box((0, 0, 0), (1, 1, 1), 2.0)
    alpha = 0.4
    rng = np.random.default_rng(0)
    x, y = rng.random((400000, 3)), rng.random((400000, 3))
    r = np.linalg.norm(x - y, axis=1)
    vals = (1 + r**-alpha) * np.exp(-0.3 * np.linalg.norm(x, axis=1) - 0.3 * np.linalg.norm(y, axis=1))
    ref = 2.0 * math.sqrt(vals.mean())
    se = 2.0 * 0.5 / math.sqrt(vals.mean()) * vals.std() / math.sqrt(vals.size)
    assert abs(h_alpha_norm(mu, alpha, a=0.3) - ref) < 4 * se
    # a = 0: E|x - y|^-alpha over the unit cube, closed-form A(z) route
    vals0 = 1 + r**-alpha
    assert h_alpha_norm(mu, alpha) == pytest.approx(2.0 * math.sqrt(vals0.mean()), rel=3e-3)
    assert h_alpha_norm(DiscreteMeasure.lebesgue(1.0), alpha) == math.inf


@given(st.floats(0.01, 3), st.floats(-2, 2), st.floats(0.2, 1.5))
def test_first_moment_gaussian_closed_form(t, x0, w):
    f = GaussianBump([0.2, 0, 0], w)
    mu = DiscreteMeasure.from_atoms([((x0, 0.1, 0), 1.5)])
    assert first_moment_exact(mu, f, t) == pytest.approx(1.5 * gauss_smoothed(f, t, [x0, 0.1, 0]), rel=1e-8)


def test_first_moment_lebesgue_and_box():
    f = GaussianBump([0, 0, 0], 0.5, 2.0)
    assert first_moment_exact(DiscreteMeasure.lebesgue(3.0), f, 1.0) == pytest.approx(
        3.0 * 2.0 * (2 * math.pi * 0.25) ** 1.5, rel=1e-10)
    # box symmetric about the bump: P(x' + B_t in box) integrated against f, separable
    box = DiscreteMeasure.lebesgue_box((-1, -1, -1), (1, 1, 1), 1.0)
    from scipy.special import ndtr

    s = math.sqrt(0.25 + 0.5)
    one_d = math.sqrt(2 * math.pi * 0.25) * (ndtr(1 / s) - ndtr(-1 / s))
    assert first_moment_exact(box, GaussianBump([0, 0, 0], 0.5), 0.5) == pytest.approx(one_d**3, rel=1e-8)


def test_smooth_ball_heat_smoothed_mc():
    f = SmoothBall([0, 0, 0], 1.0, 0.4)
    rng = np.random.default_rng(1)
    x = np.array([0.8, 0, 0]) + math.sqrt(0.3) * rng.standard_normal((400000, 3))
    vals = f(x)
    assert abs(f.heat_smoothed(0.3, [0.8, 0, 0]) - vals.mean()) < 4 * vals.std() / math.sqrt(vals.size)


def test_gaussian_convolution_bound():
    # E|N(0, s I_3)|^-2 = 1 / s
    lhs, env = gaussian_convolution_bound_check(3, 2.0, 0.5, [0, 0, 0], [0, 0, 0])
    assert lhs == pytest.approx(1.0, rel=1e-9)
    assert env == pytest.approx(2.0)
    # far apart the Gaussian barely smooths: lhs -> |x - y|^-r
    lhs, env = gaussian_convolution_bound_check(3, 1.0, 1e-4, [0, 0, 0], [2, 0, 0])
    assert lhs == pytest.approx(0.5, rel=1e-3)
    with pytest.raises(DomainError):
        gaussian_convolution_bound_check(3, 3.0, 1.0, [0, 0, 0], [1, 0, 0])
    c = fit_envelope_constant(3, 1.0, [0.1, 1.0, 3.0], [0.01, 0.3, 2.0])
    assert 1.0 <= c < 3.0


@pytest.mark.parametrize("xi,xj", [([0.4, 0, 0], [-0.4, 0, 0]), ([0.2, 0.3, 0], [0.25, 0.35, 0.05])])
def test_pair_expectation_tau_oracle(xi, xj):
    f = GaussianBump([0.1, 0, 0], 0.6)
    got = _pair_singular_expectation(f, 0.4, xi, xj, 0.3)
    assert got == pytest.approx(pair_tau_oracle(f, 0.4, xi, xj, 0.3), rel=1e-5)


def test_second_moment_bound_rhs():
    p = ModelParams(3, 0.3)
    f = GaussianBump([0, 0, 0], 0.5)
    mu = DiscreteMeasure.from_atoms([((0.5, 0, 0), 1.0), ((-0.5, 0, 0), 1.0)])
    assert second_moment_bound_rhs(p, mu, f, 0.5, 1.0) == math.inf
    with pytest.raises(ValueError):
        second_moment_bound_rhs(p, mu, f, 0.5, 0.0)
    v = second_moment_bound_rhs(p, mu, f, 0.5, 1.0, include_self=False)
    first = sum(gauss_smoothed(f, 0.5, x) for x in ([0.5, 0, 0], [-0.5, 0, 0]))
    assert v > first**2


def test_pair_table():
    tab, r_max = mollified_pair_table(3, 0.3, r_max=2.0, n=9)
    assert len(tab) == 9 and r_max == 2.0
    assert tab[4] == pytest.approx(2 * mollified_h(3, 0.3, math.sqrt(2.0)), rel=1e-12)


def test_second_moment_small_kappa_factorizes():
    p = ModelParams(3, 0.01)
    f = GaussianBump([0, 0, 0], 0.5)
    mu = DiscreteMeasure.from_atoms([((0.3, 0, 0), 1.0)])
    est = second_moment_bridge_rhs(p, mu, f, 0.5, 20000, 32, rng=1, epsilon=0.3, delta=0.1)
    first = gauss_smoothed(f, 0.6, [0.3, 0, 0])
    assert abs(est.mean - first**2) < 4 * est.std_error + 1e-3 * first**2


def test_second_moment_worker_invariance():
    p = ModelParams(3, 0.3)
    f = GaussianBump([0, 0, 0], 0.5)
    mu = DiscreteMeasure.from_atoms([((0.3, 0, 0), 1.0), ((0, 0.3, 0), 0.5)])
    a = second_moment_bridge_rhs(p, mu, f, 0.5, 3000, 16, rng=4, epsilon=0.3, workers=1, block=512)
    b = second_moment_bridge_rhs(p, mu, f, 0.5, 3000, 16, rng=4, epsilon=0.3, workers=2, block=512)
    assert a == b
    with pytest.raises(ValueError):
        second_moment_bridge_rhs(p, DiscreteMeasure.lebesgue(1.0), f, 0.5, 10, 8)
