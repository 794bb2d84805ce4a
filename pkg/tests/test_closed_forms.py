import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as sint

from cgs import closed_forms as cf
from cgs.errors import DivergenceError, DomainError


def test_model_params_domain():
    with pytest.raises(DomainError):
        cf.ModelParams(5, 2.0)
    with pytest.raises(DomainError):
        cf.ModelParams(3, 5.0)      # critical exponent excluded
    with pytest.raises(DomainError):
        cf.ModelParams(3, 3.0)      # p must exceed 4/(d-2) - 1 = 3
    P = cf.ModelParams(3, 4.0)
    assert P.two_star == 6.0 and P.crit_power == 5.0 and P.sobolev_gap == 1.0
    assert cf.ModelParams(4, 2.0).above_energy_threshold      # boundary p = d/(d-2)


@pytest.mark.parametrize("d, r, expected", [
    (3, 0.0, 1.0), (3, math.sqrt(3.0), 1.0 / math.sqrt(2.0)), (4, math.sqrt(8.0), 0.5)])
def test_W_values(d, r, expected):
    assert cf.eval_W(d, r) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("d, r, expected", [
    (3, 0.0, 0.5), (4, 0.0, 1.0), (3, math.sqrt(3.0), 0.0)])
def test_LambdaW_values(d, r, expected):
    assert cf.eval_LambdaW(d, r) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("d, r, expected", [
    (3, 0.0, -5.0), (4, 0.0, -3.0), (3, math.sqrt(3.0), -1.25)])
def test_V_values(d, r, expected):
    assert cf.eval_V(d, r) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("d", [3, 4])
def test_LambdaW_is_generator_of_scaling(d):
    r = np.geomspace(1e-3, 1e4, 1000)
    lw = cf.eval_LambdaW(d, r)
    ref = 0.5 * (d - 2) * cf.eval_W(d, r) + r * cf.eval_dW(d, r)
    assert np.max(np.abs(lw - ref)) < 1e-13


@pytest.mark.parametrize("d", [3, 4])
def test_W_solves_critical_equation(d):
    # -W'' - (d-1)/r W' = W^{(d+2)/(d-2)}, checked by a centered difference of W'
    r = np.linspace(0.1, 20.0, 200)
    h = 1e-5
    d2 = (cf.eval_dW(d, r + h) - cf.eval_dW(d, r - h)) / (2 * h)
    lhs = -d2 - (d - 1) / r * cf.eval_dW(d, r)
    rhs = cf.eval_W(d, r) ** ((d + 2.0) / (d - 2))
    assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_delta_beta_examples():
    P3, P4 = cf.ModelParams(3, 4.0), cf.ModelParams(4, 2.0)
    assert cf.delta(P3, 0.25) == pytest.approx(0.5)
    assert cf.delta(P4, 1.0 / (math.e - 1.0)) == pytest.approx(1.0, rel=1e-14)
    assert cf.delta(P4, 1.0) == pytest.approx(1.0 / math.log(2.0), rel=1e-14)
    assert cf.beta(P3, 0.25) == pytest.approx(0.5)
    assert cf.beta(P4, 1.0) == pytest.approx(math.log(2.0), rel=1e-14)
    assert cf.beta(P4, 1e12) < 1.0
    assert cf.beta(P4, 1e12) == pytest.approx(1.0, rel=1e-11)
    for f in (cf.delta, cf.beta):
        with pytest.raises(DomainError):
            f(P3, 0.0)


def test_alpha_examples():
    P3, P4 = cf.ModelParams(3, 4.0), cf.ModelParams(4, 2.0)
    assert cf.alpha(P3, 0.1) == pytest.approx(0.01, rel=1e-15)
    assert cf.alpha(P4, math.log(2.0)) == pytest.approx(1.0, rel=1e-13)
    a = cf.alpha(P4, 1e-3)
    assert abs(a * math.log1p(1.0 / a) - 1e-3) < 1e-12 * 1e-3
    with pytest.raises(DomainError):
        cf.alpha(P4, 1.0)
    with pytest.raises(DomainError):
        cf.alpha(P3, -1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-8.0, max_value=0.0), st.sampled_from([3, 4]))
def test_alpha_beta_round_trip(log_s, d):
    P = cf.ModelParams(d, 4.0 if d == 3 else 2.0)
    s = 10.0**log_s
    assert abs(cf.alpha(P, cf.beta(P, s)) - s) <= 1e-11 * s


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=-9.0, max_value=3.0), st.floats(min_value=1e-6, max_value=1.0))
def test_beta_strictly_increasing(log_s, rel_step):
    P = cf.ModelParams(4, 2.0)
    s = 10.0**log_s
    assert cf.beta(P, s * (1.0 + rel_step)) > cf.beta(P, s)


@pytest.mark.parametrize("t", [1e-2, 1e-4, 1e-6, 1e-8])
def test_alpha_d4_log_ratio(t):
    P = cf.ModelParams(4, 2.0)
    ratio = cf.alpha(P, t) * math.log1p(1.0 / t) / t
    assert 0.5 <= ratio <= 2.0


def test_interval_I():
    assert cf.interval_I(1.0, 1.0, 1.0) == pytest.approx((0.5, 1.5))
    assert cf.interval_I(1e-3, 2.0, 4.0) == pytest.approx((2.5e-4, 7.5e-4))
    with pytest.raises(DomainError):
        cf.interval_I(0.0, 1.0, 1.0)


def test_exponents():
    e = cf.compute_exponents(cf.ModelParams(3, 4.0), 8.0)
    assert e.theta_big == pytest.approx(5.0 / 16.0)
    assert e.nu == pytest.approx(3.0 / 16.0)
    e4 = cf.compute_exponents(cf.ModelParams(4, 2.0), 12.0)
    assert e4.nu == pytest.approx(1.0 / 6.0)      # boundary p = d/(d-2) takes the first branch
    with pytest.raises(DomainError):
        cf.compute_exponents(cf.ModelParams(3, 4.0), 5.0)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([3, 4]), st.floats(min_value=0.05, max_value=0.95))
def test_default_q_is_admissible(d, frac):
    lo, hi = 4.0 / (d - 2) - 1.0, (d + 2.0) / (d - 2)
    P = cf.ModelParams(d, lo + frac * (hi - lo))
    e = cf.compute_exponents(P)
    assert e.q > max(P.two_star, P.two_star / (P.p - 1.0))
    assert e.theta_big > 0


def test_gamma_and_sphere():
    assert cf.gamma_ball(3) == pytest.approx(math.gamma(2.5))
    assert math.gamma(2.5) == pytest.approx(3.0 * math.sqrt(math.pi) / 4.0)
    assert cf.sphere_area(3) == pytest.approx(4.0 * math.pi)
    assert cf.sphere_area(4) == pytest.approx(2.0 * math.pi**2)
    assert cf.ball_volume(4, 10.0) == pytest.approx(0.5 * math.pi**2 * 1e4)


@pytest.mark.parametrize("d, m", [(3, 6.0), (3, 5.0), (4, 3.0), (4, 4.0)])
def test_power_integral_against_adaptive_quadrature(d, m):
    P = cf.ModelParams(d, 4.0 if d == 3 else 2.0)
    f = lambda r: cf.sphere_area(d) * r ** (d - 1) * cf.eval_W(d, r) ** m
    ref = sint.quad(f, 0, 1)[0] + sint.quad(f, 1, np.inf)[0]
    assert cf.w_power_integral(P, m) == pytest.approx(ref, rel=1e-9)


def test_power_integral_divergence():
    with pytest.raises(DivergenceError):
        cf.w_power_integral(cf.ModelParams(3, 4.0), 2.0)


@pytest.mark.parametrize("d, r", [(3, 4.0), (3, 5.0), (3, 3.5), (4, 2.0), (4, 3.0)])
def test_lambda_pairing_against_adaptive_quadrature(d, r):
    P = cf.ModelParams(d, 4.0 if d == 3 else 2.0)
    f = lambda x: cf.sphere_area(d) * x ** (d - 1) * cf.eval_W(d, x) ** r * cf.eval_LambdaW(d, x)
    ref = sint.quad(f, 0, 1)[0] + sint.quad(f, 1, np.inf, limit=200)[0]
    assert cf.w_lambda_pairing(P, r) == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_kp_examples():
    P3, P4 = cf.ModelParams(3, 4.0), cf.ModelParams(4, 2.0)
    assert cf.kp_closed_form(P3) == pytest.approx(0.1 * cf.w_power_integral(P3, 5.0), rel=1e-14)
    assert cf.kp_closed_form(P4) == pytest.approx(cf.w_power_integral(P4, 3.0) / 3.0, rel=1e-14)
    near = cf.ModelParams(3, 5.0 - 1e-9)
    assert 0 < cf.kp_closed_form(near) < 1e-8


def test_a1_fourier_values():
    assert cf.a1_fourier(cf.ModelParams(3, 4.0)) == pytest.approx(6.0 * math.pi, rel=1e-14)
    assert cf.a1_fourier(cf.ModelParams(4, 2.0)) == pytest.approx(64.0 * math.pi**2, rel=1e-14)
    ratio = cf.kp_closed_form(cf.ModelParams(3, 4.0)) / (6.0 * math.pi)
    assert ratio == pytest.approx(1.0 / (5.0 * math.sqrt(3.0)), rel=1e-13)


@pytest.mark.parametrize("d", [3, 4])
@pytest.mark.parametrize("s", [0.25, 1.0, 4.0])
def test_fourier_integral_closed_form(d, s):
    f = lambda k: cf.sphere_area(d) * k ** (d - 3) / (k * k + s)
    ref = sint.quad(f, 0, 1)[0]
    assert cf.fourier_integral_closed_form(d, s) == pytest.approx(ref, rel=1e-12)
