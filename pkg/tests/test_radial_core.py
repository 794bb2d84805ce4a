import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgs import closed_forms as cf
from cgs import radial_core as rc
from cgs.errors import ConfigError, DivergenceError
from cgs.resolvent import background


def test_ball_volumes():
    g3 = rc.build_grid(3, 100.0, 512, 2048)
    one = rc.RadialFunction(g3, np.ones(g3.n))
    assert rc.integrate(one) == pytest.approx(4.0 * math.pi / 3.0 * 1e6, rel=1e-10)
    g4 = rc.build_grid(4, 10.0, 512, 2048)
    one = rc.RadialFunction(g4, np.ones(g4.n))
    assert rc.integrate(one) == pytest.approx(0.5 * math.pi**2 * 1e4, rel=1e-10)


def test_gaussian_integral():
    g = rc.build_grid(3, 10.0, 512, 2048)
    f = rc.RadialFunction(g, np.exp(-g.nodes**2))
    assert rc.integrate(f) == pytest.approx(math.pi**1.5, rel=1e-10)


def test_quadrature_second_order_under_halving():
    errs = []
    for n in (32, 64, 128):
        g = rc.build_grid(3, 10.0, n, 4 * n)
        errs.append(abs(rc.integrate(rc.RadialFunction(g, np.exp(-g.nodes**2))) - math.pi**1.5))
    assert errs[0] / errs[1] >= 4.0 and errs[1] / errs[2] >= 4.0


def test_grid_structure(grid3):
    assert np.all(np.diff(grid3.nodes) > 0)
    assert grid3.weights[0] == 0.0 and np.all(grid3.weights[1:] > 0)
    h = np.diff(grid3.nodes)
    assert h[grid3.n_inner] == pytest.approx(h[grid3.n_inner - 1], rel=1e-12)


@pytest.mark.parametrize("n_inner, n_outer", [(15, 64), (64, 15), (64, 33), (8, 64)])
def test_invalid_counts(n_inner, n_outer):
    with pytest.raises(ConfigError):
        rc.build_grid(3, 100.0, n_inner, n_outer)


def test_invalid_rmax():
    with pytest.raises(ConfigError):
        rc.build_grid(3, 1.0, 64, 64)


def test_W_crit_power_integral_two_resolutions(P3):
    vals = []
    for n in (512, 1024):
        g = rc.build_grid(3, 1000.0, n, 4 * n)
        W = background(g).W
        vals.append(rc.integrate(rc.power(W, 6.0)))
    assert vals[0] == pytest.approx(vals[1], rel=1e-8)
    assert vals[1] == pytest.approx(cf.w_power_integral(P3, 6.0), rel=1e-8)


def test_divergent_integrals(grid3):
    bg = background(grid3)
    with pytest.raises(DivergenceError):
        rc.integrate(rc.power(bg.W, 2.0))
    with pytest.raises(DivergenceError):
        rc.lq_norm(bg.LW, 2.0)
    assert rc.integrate(rc.RadialFunction(grid3, np.zeros(grid3.n))) == 0.0


def test_tail_exponent_of_W(grid3, grid4):
    for g in (grid3, grid4):
        gamma = rc.fit_tail_exponent(background(g).W)
        assert abs(gamma - (g.d - 2)) <= 0.05


def test_tail_mismatch_rejected(grid3):
    with pytest.raises(ValueError):
        rc.RadialFunction(grid3, background(grid3).W.values, tail_exponent=8.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=0.1, max_value=10.0), st.sampled_from([4.0, 6.0, 8.0]))
def test_lq_norm_homogeneous(c, q):
    g = rc.default_grid(3)
    W = background(g).W
    a = rc.lq_norm(W.like(c * W.values, W.tail_exponent, c * W.tail_amplitude), q)
    assert a == pytest.approx(c * rc.lq_norm(W, q), rel=1e-12)


def test_orthogonality_W_VLW(grid3, grid4):
    for g in (grid3, grid4):
        bg = background(g)
        P = cf.ModelParams(g.d, 4.0 if g.d == 3 else 2.0)
        vlw = rc.product(bg.V, bg.LW)
        ts = P.two_star
        norm = rc.lq_norm(bg.W, ts) * rc.lq_norm(vlw, ts / (ts - 1.0))
        assert abs(rc.inner(bg.W, vlw)) < 1e-8 * norm


@pytest.mark.parametrize("d, p", [(3, 4.0), (3, 3.5), (4, 2.0), (4, 2.5)])
def test_W_power_lambda_pairing(d, p):
    g = rc.default_grid(d)
    bg = background(g)
    P = cf.ModelParams(d, p)
    quad = rc.inner(rc.power(bg.W, p), bg.LW)
    assert quad == pytest.approx(cf.w_lambda_pairing(P, p), rel=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_inner_positive_definite(seed):
    g = rc.default_grid(3)
    rng = np.random.default_rng(seed)
    c = rng.normal(size=3)
    v = sum(ci * np.exp(-(g.nodes - k) ** 2) for k, ci in enumerate(c))
    f = rc.RadialFunction(g, v)
    assert rc.inner(f, f) >= 0.0


def test_scale_identity(grid3):
    W = background(grid3).W
    assert np.array_equal(rc.scale(W, 1.0).values, W.values)


@pytest.mark.parametrize("d", [3, 4])
def test_scale_preserves_gradient_norm(d):
    g = rc.default_grid(d)
    W = background(g).W
    a = rc.gradient_norm_sq(rc.scale(W, 2.0))
    b = rc.gradient_norm_sq(W)
    assert math.sqrt(a) == pytest.approx(math.sqrt(b), rel=1e-6)


@pytest.mark.parametrize("d", [3, 4])
def test_scale_derivative_is_generator(d):
    g = rc.default_grid(d)
    bg = background(g)
    eps = 1e-4
    dT = (rc.scale(bg.W, 1 + eps).values - rc.scale(bg.W, 1 - eps).values) / (2 * eps)
    assert np.max(np.abs(dT + 2.0 / (d - 2) * bg.LW.values)) < 1e-6


def test_scale_exact_matches_closed_form():
    g = rc.default_grid(3)
    W = background(g).W
    lam = 3.0
    S = rc.scale_exact(W, lam)
    mu = lam ** (2.0 / (g.d - 2))
    ref = cf.eval_W(3, S.grid.nodes / mu) / lam
    assert np.max(np.abs(S.values - ref)) < 1e-15


@pytest.mark.parametrize("d", [3, 4])
def test_operator_residuals_second_order(d):
    res = {}
    for n in (256, 512):
        g = rc.build_grid(d, 1000.0, n, 4 * n)
        bg = background(g)
        L0 = rc.assemble_radial_operator(g, 0.0)
        LV = rc.assemble_radial_operator(g, 0.0, bg.V)
        e = (d + 2.0) / (d - 2)
        r1 = L0.apply(bg.W.values) - bg.W.values**e
        r2 = LV.apply(bg.LW.values)
        # interior nodes; the far-field row carries the closure error
        res[n] = (np.abs(r1[:-1]).max(), np.abs(r2[:-1]).max())
    for k in range(2):
        assert res[256][k] / res[512][k] >= 3.9


def test_constant_interior_residual(grid3):
    L = rc.assemble_radial_operator(grid3, 1.0, robin=False)
    r = L.apply(np.ones(grid3.n)) - 1.0
    assert np.max(np.abs(r[:-1])) < 1e-14 * np.abs(L.bands).max()


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.sampled_from([0.0, 1e-3, 1.0]))
def test_operator_symmetric_in_volume_inner_product(seed, s):
    g = rc.build_grid(3, 100.0, 64, 128)
    rng = np.random.default_rng(seed)
    L = rc.assemble_radial_operator(g, s, background(g).V)
    f = rng.normal(size=g.n)
    h = rng.normal(size=g.n)
    f[-1] = h[-1] = 0.0
    a = np.dot(g.volumes, L.apply(f) * h)
    b = np.dot(g.volumes, f * L.apply(h))
    scale = np.dot(g.volumes, np.abs(L.apply(f) * h)) + np.dot(g.volumes, np.abs(f * L.apply(h)))
    assert abs(a - b) <= 1e-10 * scale


def test_operator_solve_round_trip(grid3):
    L = rc.assemble_radial_operator(grid3, 0.1)
    f = np.exp(-grid3.nodes**2)
    assert np.max(np.abs(L.apply(L.solve(f)) - f)) < 1e-10


def test_robin_kappa():
    assert rc.robin_kappa(3, 0.0, 100.0) == pytest.approx(1.0 / 100.0)
    assert rc.robin_kappa(3, 4.0, 100.0) == pytest.approx(2.0 + 1.0 / 100.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_monotone_cubic_preserves_monotonicity(seed):
    g = rc.build_grid(3, 50.0, 32, 64)
    rng = np.random.default_rng(seed)
    steps = rng.exponential(size=g.n) * (rng.random(g.n) < 0.3)
    v = -np.cumsum(steps)
    x = np.linspace(0.0, g.r_max, 20001)
    y = rc.monotone_cubic(g, v)(x)
    assert np.all(np.diff(y) <= 1e-12 * np.abs(v).max())


def test_monotone_cubic_interpolates_W_to_fourth_order():
    errs = []
    for n in (128, 256):
        g = rc.build_grid(3, 100.0, n, 2 * n)
        W = background(g).W
        x = np.linspace(0.0, 5.0, 5001)
        errs.append(np.abs(rc.monotone_cubic(g, W.values)(x) - cf.eval_W(3, x)).max())
    assert errs[0] / errs[1] > 12.0
