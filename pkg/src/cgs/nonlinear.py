"""Nonlinear remainders, action/Nehari functionals, Pohozaev residual and K_p.

Odd powers |x|^{m-1} x are evaluated as sign(x) |x|^m so that iterates which
dip below zero before convergence stay well defined.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import closed_forms as cf
from .errors import DomainError, ResolutionError
from .radial_core import RadialFunction, build_grid, gradient_norm_sq, inner, integrate, power
from .resolvent import background


def odd_power(x, m):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** m


@dataclass(frozen=True)
class RescaledParams:
    """Mass shift s and coupling t of -Delta u + s u - t|u|^{p-1}u - |u|^{4/(d-2)}u = 0.

    The original frequency-omega problem is the special case (s, t) = (omega, 1).
    """

    s: float
    t: float

    def __post_init__(self):
        if self.s < 0 or self.t < 0:
            raise DomainError("s and t must be nonnegative")

    @classmethod
    def original(cls, omega):
        return cls(float(omega), 1.0)


# ---------------------------------------------------------------------------
# pointwise remainders (array level)


def n_values(params, W, eta, t):
    e = params.crit_power
    u = W + eta
    crit = odd_power(u, e) - W**e - e * W ** (e - 1.0) * eta
    return crit + t * (odd_power(u, params.p) - W**params.p)


def d_values(params, W, eta1, eta2):
    e = params.crit_power
    return odd_power(W + eta1, e) - odd_power(W + eta2, e) - e * W ** (e - 1.0) * (eta1 - eta2)


def e_values(params, W, eta1, eta2):
    return odd_power(W + eta1, params.p) - odd_power(W + eta2, params.p)


def f_values(params, W, eta, s, t):
    return -s * W + t * W**params.p + n_values(params, W, eta, t)


# ---------------------------------------------------------------------------
# RadialFunction wrappers


def _W(eta):
    return background(eta.grid).W.values


def eval_N(params, eta, t):
    return eta.like(n_values(params, _W(eta), eta.values, t))


def eval_F(params, eta, s, t):
    return eta.like(f_values(params, _W(eta), eta.values, s, t))


def eval_D(params, eta1, eta2):
    if eta1.grid is not eta2.grid:
        raise ValueError("functions live on different grids")
    return eta1.like(d_values(params, _W(eta1), eta1.values, eta2.values))


def eval_E(params, eta1, eta2):
    if eta1.grid is not eta2.grid:
        raise ValueError("functions live on different grids")
    return eta1.like(e_values(params, _W(eta1), eta1.values, eta2.values))


# ---------------------------------------------------------------------------
# functionals


@dataclass(frozen=True)
class FunctionalParts:
    mass: float      # ||u||_2^2
    grad: float      # ||grad u||_2^2
    sub: float       # ||u||_{p+1}^{p+1}
    crit: float      # ||u||_{2*}^{2*}


def functional_parts(params, u, mass=True):
    """The four integrals; with mass=False the L^2 term (divergent for W) is skipped as 0."""
    if not np.any(u.values):
        return FunctionalParts(0.0, 0.0, 0.0, 0.0)
    return FunctionalParts(integrate(power(u, 2.0)) if mass else 0.0, gradient_norm_sq(u),
                           integrate(power(u, params.p + 1.0)),
                           integrate(power(u, params.two_star)))


def nehari(params, u, mode):
    """s||u||^2 + ||grad u||^2 - t||u||_{p+1}^{p+1} - ||u||_{2*}^{2*}."""
    c = functional_parts(params, u, mode.s != 0)
    return mode.s * c.mass + c.grad - mode.t * c.sub - c.crit


def action(params, u, mode):
    c = functional_parts(params, u, mode.s != 0)
    return (0.5 * mode.s * c.mass + 0.5 * c.grad - mode.t * c.sub / (params.p + 1.0)
            - c.crit / params.two_star)


def nehari_relative(params, u, mode):
    """Nehari value divided by ||grad u||^2 (0 for u = 0)."""
    c = functional_parts(params, u, mode.s != 0)
    if c.grad == 0.0:
        return 0.0
    return (mode.s * c.mass + c.grad - mode.t * c.sub - c.crit) / c.grad


def pohozaev_terms(params, u, alpha, t):
    c = functional_parts(params, u)
    ts = params.two_star
    left = alpha * c.mass / params.d
    right = (ts - (params.p + 1.0)) / (ts * (params.p + 1.0)) * t * c.sub
    return left, right


def pohozaev_residual(params, u, alpha, t):
    """(1/d) alpha ||u||^2 - (2*-(p+1))/(2*(p+1)) t ||u||_{p+1}^{p+1}, normalized.

    The normalization is the larger of the two terms; 0/0 (u = 0) returns 0.
    """
    left, right = pohozaev_terms(params, u, alpha, t)
    scale = max(abs(left), abs(right))
    if scale == 0.0:
        return 0.0
    return (left - right) / scale


@lru_cache(maxsize=4)
def _kp_grid(d):
    return build_grid(d, 1e5, 512, 4096)


def compute_Kp(params, grid=None, rtol=1e-7):
    """K_p = -<W^p, Lambda W>: closed form, cross-checked by quadrature."""
    exact = cf.kp_closed_form(params)
    if grid is None:
        # W^p LambdaW decays like r^{-(d-2)(p+1)}, slowly for p near the lower end;
        # a far cutoff keeps the subleading tail terms below 1e-8 for every admissible p
        grid = _kp_grid(params.d)
    bg = background(grid)
    quad = -inner(power(bg.W, params.p), bg.LW)
    if abs(quad - exact) > rtol * abs(exact):
        raise ResolutionError(f"K_p quadrature {quad!r} disagrees with closed form {exact!r}")
    return exact
