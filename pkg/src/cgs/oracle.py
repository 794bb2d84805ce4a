"""Shooting oracle for -Delta u + s u - t|u|^{p-1}u - |u|^{4/(d-2)}u = 0.

Integrates the radial ODE outward from a series start at a small r0 and classifies each
shot: ``crossed_zero`` (u reaches 0: the initial height is too large),
``blew_up`` (u turns upward or exceeds 10 u0: too small), or ``decayed``
(neither happens before the classification radius).  Bisection on u(0)
brackets the decaying separatrix; beyond the radius where the two bracketing
shots separate, the profile continues with the exact Yukawa tail
r^{-(d-2)/2} K_{(d-2)/2}(sqrt(s) r).
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import special
from scipy.integrate import solve_ivp

from .errors import BracketError, DomainError, IntegrationError
from .radial_core import RadialFunction, integrate, power

R0 = 1e-6
RTOL, ATOL = 1e-12, 1e-15


@dataclass
class ShootingResult:
    u0: float
    profile: RadialFunction
    classified: str
    bisection_width: float
    r_match: float = None
    shots: int = 0
    solution: object = field(default=None, repr=False)


def _rhs_factory(params, s, t):
    d, p, e = params.d, params.p, params.crit_power

    def rhs(r, y):
        u, v = y
        au = abs(u)
        f = s * u - t * au ** (p - 1.0) * u - au ** (e - 1.0) * u
        return [v, f - (d - 1) / r * v]

    return rhs


def start_radius(params, u0):
    """R0, shrunk by the critical length u0^{-2/(d-2)} for tall starts."""
    return R0 * min(1.0, u0 ** (-0.5 * (params.crit_power - 1.0)))


def _series_start(params, s, t, u0):
    r0 = start_radius(params, u0)
    upp = (s * u0 - t * u0**params.p - u0**params.crit_power) / params.d
    return r0, [u0 + 0.5 * upp * r0**2, upp * r0]


def classification_radius(s):
    return 16.0 / math.sqrt(s)


def _integrate(params, s, t, u0, r_end, dense=False, rtol=RTOL):
    rhs = _rhs_factory(params, s, t)

    def hit_zero(r, y):
        return y[0]

    def turn_up(r, y):
        return y[1]

    def overshoot(r, y):
        return y[0] - 10.0 * u0

    for ev in (hit_zero, turn_up, overshoot):
        ev.terminal = True
    turn_up.direction = 1.0
    r0, y0 = _series_start(params, s, t, u0)
    sol = solve_ivp(rhs, (r0, r_end), y0, method="DOP853",
                    rtol=rtol, atol=ATOL * u0, events=[hit_zero, turn_up, overshoot],
                    dense_output=dense)
    if sol.status == -1:
        raise IntegrationError(f"integration failed at u0={u0}: {sol.message}")
    if sol.t_events[0].size:
        return "crossed_zero", sol
    if sol.t_events[1].size or sol.t_events[2].size:
        return "blew_up", sol
    return "decayed", sol


def shoot(params, s, t, u0, grid=None, r_end=None, rtol=RTOL):
    """One shot from u(0) = u0; the profile is sampled on ``grid`` when given.

    s = 0 (the pure critical equation) needs an explicit ``r_end``.
    """
    if not (s >= 0 and t >= 0 and u0 > 0) or (s == 0 and r_end is None):
        raise DomainError("shoot needs s >= 0, t >= 0, u0 > 0 (and r_end when s = 0)")
    r_end = r_end or classification_radius(s)
    cls, sol = _integrate(params, s, t, u0, r_end, dense=grid is not None, rtol=rtol)
    prof = None
    if grid is not None:
        r = grid.nodes
        r0 = sol.t[0]
        vals = np.zeros_like(r)
        inside = (r >= r0) & (r <= sol.t[-1])
        vals[inside] = sol.sol(r[inside])[0]
        vals[r < r0] = u0
        prof = RadialFunction(grid, vals)
    return ShootingResult(u0, prof, cls, 0.0, None, 1, sol)


def yukawa_tail(d, s, r):
    """r^{-(d-2)/2} K_{(d-2)/2}(sqrt(s) r), scaled by exp(sqrt(s) r) for stability."""
    nu = (d - 2) / 2.0
    k = math.sqrt(s)
    return r ** (-nu) * special.kve(nu, k * r)


def _bracket(params, s, t, guess, r_end):
    """Geometric scan of u0 in [0.5, 2] * guess for a blew_up / crossed_zero pair."""
    lo, hi = None, None
    for f in np.geomspace(0.5, 2.0, 17):
        u0 = guess * f
        cls, _ = _integrate(params, s, t, u0, r_end)
        if cls == "crossed_zero":
            hi = u0
            break
        lo = u0
    if lo is None or hi is None:
        raise BracketError(f"no shooting dichotomy in [{0.5 * guess}, {2 * guess}]")
    return lo, hi


def find_ground_state_shooting(params, s, t, grid=None, guess=1.0, rel_width=1e-12,
                               match_tol=1e-9):
    """Bisection on u(0) to the decaying separatrix.

    Up to r_match (where the bracketing shots still agree to ``match_tol``
    relative) the profile is the mean of the two bracketing dense outputs;
    beyond, the Yukawa tail with amplitude matched at r_match.
    """
    if not (s > 0 and t >= 0):
        raise DomainError("need s > 0 and t >= 0")
    r_end = classification_radius(s)
    lo, hi = _bracket(params, s, t, guess, r_end)
    shots = 0
    while hi - lo > rel_width * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        cls, _ = _integrate(params, s, t, mid, r_end)
        shots += 1
        if cls == "crossed_zero":
            hi = mid
        else:
            lo = mid
    _, sol_lo = _integrate(params, s, t, lo, r_end, dense=True)
    _, sol_hi = _integrate(params, s, t, hi, r_end, dense=True)
    r_stop = min(sol_lo.t[-1], sol_hi.t[-1])
    rr = np.geomspace(max(sol_lo.t[0], sol_hi.t[0]), r_stop, 4000)
    a, b = sol_lo.sol(rr)[0], sol_hi.sol(rr)[0]
    mean = 0.5 * (a + b)
    good = np.abs(a - b) <= match_tol * np.abs(mean)
    # first separation point
    bad = np.nonzero(~good)[0]
    r_match = rr[bad[0] - 1] if bad.size else rr[-1]
    u0 = 0.5 * (lo + hi)
    prof = None
    if grid is not None:
        prof = _sample(grid, params, s, u0, sol_lo, sol_hi, r_match)
    return ShootingResult(u0, prof, "decayed", hi - lo, float(r_match), shots, (sol_lo, sol_hi))


def _sample(grid, params, s, u0, sol_lo, sol_hi, r_match):
    r = grid.nodes
    r0 = max(sol_lo.t[0], sol_hi.t[0])
    vals = np.empty_like(r)
    core = r <= r_match
    inner = core & (r >= r0)
    vals[inner] = 0.5 * (sol_lo.sol(r[inner])[0] + sol_hi.sol(r[inner])[0])
    vals[r < r0] = u0
    um = 0.5 * (sol_lo.sol(r_match)[0] + sol_hi.sol(r_match)[0])
    k = math.sqrt(s)
    amp = um / yukawa_tail(params.d, s, r_match)
    far = ~core
    vals[far] = amp * yukawa_tail(params.d, s, r[far]) * np.exp(-k * (r[far] - r_match))
    return RadialFunction(grid, vals)


def compare_profiles(u1, u2, q=None):
    """(||u1-u2||_inf / ||u1||_inf, ||u1-u2||_q / ||u1||_q) on a common grid."""
    if u1.grid is not u2.grid:
        raise ValueError("profiles must share a grid")
    diff = u1.values - u2.values
    ref = np.abs(u1.values).max()
    linf = float(np.abs(diff).max() / ref) if ref > 0 else float(np.abs(diff).max())
    if q is None:
        q = 2.0 * u1.grid.d / (u1.grid.d - 2)
    num = integrate(power(u1.like(diff), q))
    den = integrate(power(u1.like(u1.values), q))
    lq = (num / den) ** (1.0 / q) if den > 0 else num ** (1.0 / q)
    return linf, float(lq)
