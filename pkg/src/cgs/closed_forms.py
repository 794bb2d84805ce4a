"""Closed-form profiles and scalars.

W is the Aubin-Talenti bubble with W(0) = 1, LambdaW = (d-2)/2 W + r W' the
generator of the H^1 scaling and V = -(d+2)/(d-2) W^{4/(d-2)} the linearized
potential.  Everything here is evaluated directly in r = |x|; no grid is
involved, so these functions serve as exact references for the discrete layers.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import optimize, special

from .errors import DivergenceError, DomainError


@dataclass(frozen=True)
class ModelParams:
    """Dimension d in {3, 4} and subcritical exponent p."""

    d: int
    p: float

    def __post_init__(self):
        if self.d not in (3, 4):
            raise DomainError(f"d must be 3 or 4, got {self.d}")
        lo, hi = 4.0 / (self.d - 2) - 1.0, (self.d + 2.0) / (self.d - 2)
        if not lo < self.p < hi:
            raise DomainError(f"p={self.p} outside ({lo}, {hi}) for d={self.d}")

    @property
    def two_star(self):
        return 2.0 * self.d / (self.d - 2)

    @property
    def crit_power(self):
        """Exponent of the critical nonlinearity, 2* - 1 = (d+2)/(d-2)."""
        return (self.d + 2.0) / (self.d - 2)

    @property
    def sobolev_gap(self):
        """2* - (p+1) > 0."""
        return self.two_star - (self.p + 1.0)

    @property
    def above_energy_threshold(self):
        """True when p >= d/(d-2); selects the first branch of nu_q."""
        return self.p >= self.d / (self.d - 2.0)


@dataclass(frozen=True)
class Exponents:
    q: float
    theta_big: float
    nu: float
    theta_small: float


def sphere_area(d):
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def gamma_ball(d):
    """Gamma(d/2 + 1): 3 sqrt(pi)/4 for d = 3 and 2 for d = 4."""
    return math.gamma(d / 2.0 + 1.0)


def ball_volume(d, r):
    return math.pi ** (d / 2.0) * r**d / gamma_ball(d)


def _dim(params):
    """Accept ModelParams or a bare dimension."""
    return params if isinstance(params, int) else params.d


def _arr(r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("radius must be nonnegative")
    return r


def eval_W(params, r):
    d = _dim(params)
    r = _arr(r)
    return (1.0 + r * r / (d * (d - 2))) ** (-(d - 2) / 2.0)


def eval_dW(params, r):
    """Analytic radial derivative W'(r)."""
    d = _dim(params)
    r = _arr(r)
    return -(r / d) * (1.0 + r * r / (d * (d - 2))) ** (-d / 2.0)


def eval_LambdaW(params, r):
    d = _dim(params)
    r = _arr(r)
    return ((d - 2) / 2.0 - r * r / (2.0 * d)) * (1.0 + r * r / (d * (d - 2))) ** (-d / 2.0)


def eval_V(params, r):
    d = _dim(params)
    return -((d + 2.0) / (d - 2)) * eval_W(params, r) ** (4.0 / (d - 2))


def w_tail_amplitude(params):
    """c with W(r) ~ c r^{-(d-2)} as r -> infinity."""
    d = _dim(params)
    return float(d * (d - 2)) ** ((d - 2) / 2.0)


def w_power_integral(params, m):
    """Exact value of the integral of W^m over R^d (a Beta function)."""
    d = params.d
    a = d * (d - 2.0)
    k = m * (d - 2) / 2.0
    if k <= d / 2.0:
        raise DivergenceError(f"W^{m} is not integrable in dimension {d}")
    return 0.5 * sphere_area(d) * a ** (d / 2.0) * special.beta(d / 2.0, k - d / 2.0)


def w_lambda_pairing(params, r):
    """<W^r, LambdaW> = -(4 - (d-2)(r-1)) / (2(r+1)) * ||W||_{r+1}^{r+1}."""
    d = params.d
    pref = -(4.0 - (d - 2) * (r - 1.0)) / (2.0 * (r + 1.0))
    if pref == 0.0:
        return 0.0
    return pref * w_power_integral(params, r + 1.0)


def kp_closed_form(params):
    """K_p = -<W^p, LambdaW>."""
    return -w_lambda_pairing(params, params.p)


def fourier_constant(d):
    """(5-d) pi^{2-d/2} / (2^{d-2} Gamma((d-2)/2)); equals 1 for d=3, 1/4 for d=4."""
    return (5 - d) * math.pi ** (2.0 - d / 2.0) / (2.0 ** (d - 2) * math.gamma((d - 2) / 2.0))


def a1_fourier(params):
    """Limit constant A_1 obtained on the Fourier side.

    The small-frequency part of <(-Delta+s)^{-1} W, V LambdaW> is governed by
    F[W] near the origin (a multiple of |xi|^{-2}) times F[V LambdaW](0); the
    latter equals (d-2)/2 * ||W||_{(d+2)/(d-2)}^{(d+2)/(d-2)}.  The result is
    6 pi for d = 3 and 64 pi^2 for d = 4.
    """
    d = params.d
    return (fourier_constant(d) * (d * (d - 2.0)) ** ((d - 2) / 2.0) * (d - 2) / 2.0
            * w_power_integral(params, params.crit_power))


def fourier_integral_closed_form(d, s):
    """Integral over |xi| <= 1 of 1/((|xi|^2 + s)|xi|^2)."""
    if s <= 0:
        raise DomainError("s must be positive")
    if d == 3:
        return 4.0 * math.pi * s**-0.5 * math.atan(s**-0.5)
    if d == 4:
        return 2.0 * math.pi**2 * 0.5 * math.log1p(1.0 / s)
    raise DomainError("d must be 3 or 4")


def delta(params, s):
    if s <= 0:
        raise DomainError(f"delta requires s > 0, got {s}")
    if params.d == 3:
        return math.sqrt(s)
    return 1.0 / math.log1p(1.0 / s)


def beta(params, s):
    if s <= 0:
        raise DomainError(f"beta requires s > 0, got {s}")
    if params.d == 3:
        return math.sqrt(s)
    return s * math.log1p(1.0 / s)


def alpha(params, t):
    """Inverse of beta: the unique s > 0 with beta(s) = t."""
    if t <= 0:
        raise DomainError(f"alpha requires t > 0, got {t}")
    if params.d == 3:
        return t * t
    if t >= 1.0:
        raise DomainError("for d=4 alpha is defined only on (0, 1)")
    # work in x = log s where log beta is smooth and increasing
    lt = math.log(t)

    def g(x):
        return x + math.log(math.log1p(math.exp(-x))) - lt

    def dg(x):
        e = math.exp(-x)
        return 1.0 - e / ((1.0 + e) * math.log1p(e))

    lo, hi = lt - 1.0, lt + 1.0
    while g(lo) > 0:
        lo -= 2.0 * (hi - lo)
    while g(hi) < 0:
        hi += 2.0 * (hi - lo)
    x = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=1e-15)
    for _ in range(3):
        step = g(x) / dg(x)
        x -= step
        if abs(step) < 1e-16:
            break
    return math.exp(x)


def interval_I(t, Kp, A1):
    if t <= 0 or Kp <= 0 or A1 <= 0:
        raise DomainError("interval_I needs positive arguments")
    c = Kp * t / A1
    return 0.5 * c, 1.5 * c


def default_q(params):
    ts, p = params.two_star, params.p
    return float(math.ceil(2.0 * max(ts, ts / (p - 1.0), ts / (p + 3.0 - ts))))


def compute_exponents(params, q=None):
    d, p, ts = params.d, params.p, params.two_star
    if q is None:
        q = default_q(params)
    if not q > max(ts, ts / (p - 1.0)):
        raise DomainError(f"q={q} must exceed max(2*, 2*/(p-1))")
    big = (d - 2) / 2.0 - d / (2.0 * q)
    # the boundary case p = d/(d-2) belongs to the first branch
    nu = d / (2.0 * q) if params.above_energy_threshold else 1.0 - (d - 2) * (p - 1.0) / 4.0
    a = big - nu
    b = big + (d - 2) * (p - 1.0) / 2.0 - 1.0
    if a <= 0 or b <= 0:
        raise DomainError(f"q={q} gives non-positive exponent gaps ({a}, {b})")
    return Exponents(q=float(q), theta_big=big, nu=nu, theta_small=0.5 * min(a, b))
