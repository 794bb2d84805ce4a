"""Free, zero-energy and perturbed resolvents on a radial grid.

All inverses are realized with the finite-volume operator of
:func:`radial_core.assemble_radial_operator`, so the discrete identities
among them (resolvent equation, block decomposition of the perturbed
inverse) hold to round-off, not merely to truncation order.

The perturbed inverse g = {1 + (-Delta+s)^{-1} V}^{-1} f is computed in two
independent ways:
  * directly, from (-Delta + s + V) g = (-Delta + s) f solved in bordered form
    so that the near-kernel direction Lambda W stays well conditioned;
  * through the projections Q, Pi and the 2x2 block operator, which isolates
    the delta(s)/s amplification along Lambda W.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import integrate as sint
from scipy import linalg, optimize, sparse
from scipy.sparse.linalg import splu

from . import closed_forms as cf
from .errors import ConditioningError, DivergenceError, DomainError, ResolutionError
from .radial_core import (RadialFunction, assemble_radial_operator, build_grid,
                          default_grid, fit_tail_exponent)


# ---------------------------------------------------------------------------
# background profiles


@dataclass(frozen=True, eq=False)
class Background:
    """W, Lambda W, V and V Lambda W sampled on a grid (p-independent)."""

    grid: object
    W: RadialFunction
    LW: RadialFunction
    V: RadialFunction
    VLW: RadialFunction


@lru_cache(maxsize=32)
def background(grid):
    d, r = grid.d, grid.nodes
    W = RadialFunction(grid, cf.eval_W(d, r), d - 2.0)
    LW = RadialFunction(grid, cf.eval_LambdaW(d, r), d - 2.0)
    V = RadialFunction(grid, cf.eval_V(d, r), 4.0)
    VLW = RadialFunction(grid, V.values * LW.values, d + 2.0)
    return Background(grid, W, LW, V, VLW)


def _values(f):
    return f.values if isinstance(f, RadialFunction) else np.asarray(f, dtype=float)


@dataclass(frozen=True, eq=False)
class ProjectionPair:
    """Q f = <f,VLW>/<LW,VLW> LW and Pi f = <f,VLW>/||VLW||^2 VLW.

    The functional <., VLW> is the plain grid quadrature (no tail term), so
    Q and Pi are exact projections on sampled vectors.
    """

    functional: np.ndarray
    lw: np.ndarray
    vlw: np.ndarray
    den_q: float
    den_pi: float

    @classmethod
    def on(cls, grid):
        bg = background(grid)
        wv = grid.weights * bg.VLW.values
        return cls(wv, bg.LW.values, bg.VLW.values, float(wv @ bg.LW.values),
                   float(wv @ bg.VLW.values))

    def coef(self, v):
        return float(self.functional @ v)

    def Q(self, v):
        return (self.coef(v) / self.den_q) * self.lw

    def Pi(self, v):
        return (self.coef(v) / self.den_pi) * self.vlw


# ---------------------------------------------------------------------------
# free and zero-energy resolvents


@dataclass(frozen=True, eq=False)
class ResolventSolver:
    """Factorized (-Delta + s [+ V]) on a grid; mode is 'free' or 'perturbed'."""

    grid: object
    s: float
    mode: str
    operator: object

    @classmethod
    def build(cls, grid, s, mode="free"):
        if mode not in ("free", "perturbed"):
            raise ValueError("mode must be 'free' or 'perturbed'")
        pot = background(grid).V if mode == "perturbed" else None
        return cls(grid, float(s), mode, assemble_radial_operator(grid, s, pot))

    def apply(self, values):
        return self.operator.apply(_values(values))

    def solve(self, values):
        return self.operator.solve(_values(values))


@lru_cache(maxsize=64)
def _free(grid, s):
    return ResolventSolver.build(grid, s, "free")


def free_resolvent(s, f):
    """(-Delta + s)^{-1} f with the Robin far-field closure."""
    if not s > 0:
        raise DomainError("free_resolvent requires s > 0")
    return f.like(_free(f.grid, float(s)).solve(f.values))


def _check_decay(f, gamma_min):
    if f.tail_exponent is not None:
        if f.tail_exponent <= gamma_min and f.tail_amplitude != 0.0:
            raise DivergenceError(f"source decays like r^-{f.tail_exponent}; need > {gamma_min}")
        return
    v = np.abs(f.values)
    if v[-5:].max() <= 1e-14 * max(v.max(), 1e-300):
        return
    if fit_tail_exponent(f) <= gamma_min:
        raise DivergenceError(f"source decays too slowly (need r^-gamma with gamma > {gamma_min})")


def zero_energy_inverse(f):
    """(-Delta)^{-1} f, closed by u ~ c r^{-(d-2)} at r_max."""
    _check_decay(f, 2.0)
    if not np.any(f.values):
        return f.like(np.zeros_like(f.values))
    u = _free_zero(f.grid).solve(f.values)
    d = f.grid.d
    return RadialFunction(f.grid, u, d - 2.0, check_tail=False)


@lru_cache(maxsize=16)
def _free_zero(grid):
    return ResolventSolver.build(grid, 0.0, "free")


# ---------------------------------------------------------------------------
# perturbed inverse: bordered direct path


@dataclass(frozen=True, eq=False)
class PerturbedSolver:
    """Bordered LU of (-Delta + s + V) with row/column <., VLW>.

    K = [[L + V, b], [w^T, 0]] with b = VLW and w the quadrature functional.
    Solving [F; 0] -> [x; mu] and [0; 1] -> [z; nu] gives
    (L + V)^{-1} F = x - (mu/nu) z.  |nu| measures how close -s is to the
    radial spectrum; nu = 0 means L + V itself is singular.
    """

    grid: object
    s: float
    lu: object
    operator: object
    z: np.ndarray
    nu: float

    @classmethod
    def build(cls, grid, s):
        if s < 0:
            raise DomainError("shift must be nonnegative")
        op = assemble_radial_operator(grid, s, background(grid).V)
        proj = ProjectionPair.on(grid)
        n = grid.n
        A = op.to_sparse().tocoo()
        b = proj.vlw
        rows = np.concatenate([A.row, np.arange(n), np.full(n, n)])
        cols = np.concatenate([A.col, np.full(n, n), np.arange(n)])
        vals = np.concatenate([A.data, b, proj.functional])
        K = sparse.csc_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))
        try:
            # arrow structure: natural order with diagonal pivots has no fill
            lu = splu(K, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                      options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise ConditioningError(f"bordered system singular at s={s}") from exc
        e = np.zeros(n + 1)
        e[-1] = 1.0
        sol = lu.solve(e)
        if not np.all(np.isfinite(sol)):
            raise ConditioningError(f"bordered system singular at s={s}")
        nu = float(sol[-1])
        scale = np.abs(op.bands).max() * np.abs(sol[:-1]).max()
        if abs(nu) <= 1e-14 * scale:
            raise ConditioningError(f"-s is (numerically) an eigenvalue of -Delta+V; s={s}, nu={nu:.3e}")
        return cls(grid, float(s), lu, op, sol[:-1].copy(), nu)

    def solve_rhs(self, F):
        """(-Delta + s + V)^{-1} F."""
        rhs = np.append(_values(F), 0.0)
        sol = self.lu.solve(rhs)
        return sol[:-1] - (sol[-1] / self.nu) * self.z

    def __call__(self, f):
        """{1 + (-Delta+s)^{-1} V}^{-1} f for sampled f."""
        L = assemble_radial_operator(self.grid, self.s)
        return self.solve_rhs(L.apply(_values(f)))


@lru_cache(maxsize=64)
def perturbed_solver(grid, s):
    return PerturbedSolver.build(grid, float(s))


def perturbed_inverse_direct(s, f):
    if not s > 0:
        raise DomainError("perturbed_inverse_direct requires s > 0")
    return f.like(perturbed_solver(f.grid, float(s))(f.values))


# ---------------------------------------------------------------------------
# perturbed inverse: block path


@dataclass
class BlockInfo:
    eps: float
    gamma: float
    k2_terms: int
    k2_ratio: float
    outer_terms: int
    outer_ratio: float
    channel_x: float
    channel_lw: float


def _neumann(apply_T, v0, tol=1e-12, max_terms=200):
    """sum_k (-T)^k v0 with the stopping and divergence rules of the block path."""
    total = v0.copy()
    term = v0
    n0 = max(np.abs(v0).max(), 1e-300)
    prev = n0
    bad = 0
    ratio = 0.0
    for k in range(1, max_terms + 1):
        term = -apply_T(term)
        nt = np.abs(term).max()
        total += term
        ratio = nt / prev if prev > 0 else 0.0
        bad = bad + 1 if ratio >= 1.0 else 0
        if bad >= 3:
            raise DivergenceError(f"Neumann series diverges (ratio {ratio:.3g}); s too large")
        if nt < tol * n0:
            return total, k, ratio
        prev = nt
    raise DivergenceError("Neumann series did not reach tolerance in 200 terms")


class BlockSolver:
    """Perturbed inverse via (1-Q, Pi), the s=0 inverse and Neumann corrections.

    With g = eps w1 + w2 (w1 in X = ker<., VLW>, w2 in span LW) the equation
    (1 + R_s V) g = f splits into
        A11 w1 + A12 w2 = (1-Q) f,     A21 w1 + A22 w2 = Pi f,
    A11 = eps (1-Q) P | X,  A12 = (1-Q) P | LW,  A21 = eps Pi P,  A22 = Pi P | LW.
    A11 is inverted as eps^{-1} (1 + K1 S11)^{-1} K1 where K1 inverts
    (1-Q)(1 + R_0 V) on X and S11 = (1-Q)(R_s - R_0) V; A22 is rank one.
    """

    def __init__(self, grid, s, eps=0.05):
        if not s > 0 or not eps > 0:
            raise DomainError("block path needs s > 0 and eps > 0")
        self.grid, self.s, self.eps = grid, float(s), float(eps)
        self.proj = ProjectionPair.on(grid)
        self.Ls = assemble_radial_operator(grid, s)
        self.L0 = assemble_radial_operator(grid, 0.0)
        bg = background(grid)
        self.Vv = bg.V.values
        n = grid.n
        A = (self.L0.to_sparse() + sparse.diags(self.Vv)).tocoo()
        c = -self.L0.apply(self.proj.lw)
        rows = np.concatenate([A.row, np.arange(n), np.full(n, n)])
        cols = np.concatenate([A.col, np.full(n, n), np.arange(n)])
        vals = np.concatenate([A.data, c, self.proj.functional])
        self._k1 = splu(sparse.csc_matrix((vals, (rows, cols)), shape=(n + 1, n + 1)),
                        permc_spec="NATURAL", diag_pivot_thresh=0.0,
                        options=dict(SymmetricMode=True))
        # A22: Pi P LW = gamma VLW
        self.gamma = self.proj.coef(self.P(self.proj.lw)) / self.proj.den_pi
        if self.gamma == 0.0:
            raise ConditioningError("A22 vanishes")

    def P(self, v):
        return v + self.Ls.solve(self.Vv * v)

    def K1(self, y):
        rhs = np.append(self.L0.apply(y), 0.0)
        return self._k1.solve(rhs)[:-1]

    def S11(self, x):
        v = self.Vv * x
        w = self.Ls.solve(v) - self.L0.solve(v)
        return w - self.proj.Q(w)

    def A11_inv(self, y):
        """A11^{-1} y for y in X; returns (value, terms, ratio)."""
        k1y = self.K1(y)
        val, n, ratio = _neumann(lambda x: self.K1(self.S11(x)), k1y)
        self._k2_stats = (n, ratio)
        return val / self.eps

    def A12(self, c):
        """(1-Q) P (c LW) as a vector in X."""
        w = self.P(c * self.proj.lw)
        return w - self.proj.Q(w)

    def A21(self, w1):
        """Pi P (eps w1) as a coefficient on VLW."""
        return self.eps * self.proj.coef(self.P(w1)) / self.proj.den_pi

    def __call__(self, f):
        f = _values(f)
        y1 = f - self.proj.Q(f)
        y2 = self.proj.coef(f) / self.proj.den_pi
        # right-hand side of the normalized system [[1, B],[C, 1]] (w1, c2)
        r1 = self.A11_inv(y1)
        k2_terms, k2_ratio = self._k2_stats
        r2 = y2 / self.gamma
        # B c = A11^{-1} A12 (c LW) is linear in c: precompute B on c = 1
        b1 = self.A11_inv(self.A12(1.0))

        def off(v):
            w1, c2 = v[:-1], v[-1]
            return np.append(c2 * b1, self.A21(w1) / self.gamma)

        sol, n, ratio = _neumann(off, np.append(r1, r2))
        w1, c2 = sol[:-1], sol[-1]
        g = self.eps * w1 + c2 * self.proj.lw
        info = BlockInfo(self.eps, self.gamma, k2_terms, k2_ratio, n, ratio,
                         float(np.abs(self.eps * w1).max()), float(abs(c2) * np.abs(self.proj.lw).max()))
        return g, info


def perturbed_inverse_block(s, f, eps=0.05, return_info=False):
    """Block-path perturbed inverse; eps is halved (up to 5 times) on divergence."""
    err = None
    for _ in range(6):
        try:
            g, info = BlockSolver(f.grid, s, eps)(f.values)
            out = f.like(g)
            return (out, info) if return_info else out
        except DivergenceError as exc:
            err = exc
            eps *= 0.5
    raise DivergenceError(f"block path failed for s={s}: {err}")


def amplification(s, f, q):
    """||{1 + R_s V}^{-1} f||_q / ||f||_q."""
    from .radial_core import lq_norm
    g = perturbed_inverse_direct(s, f)
    return lq_norm(g.like(g.values), q) / lq_norm(f.like(f.values), q)


# ---------------------------------------------------------------------------
# spectrum of -Delta + V


@dataclass
class Eigenpair:
    e0: float
    phi: RadialFunction
    e1: float
    residual: float
    n_negative: int


def _symmetric_tridiagonal(grid, op):
    """Diagonal and off-diagonal of M^{1/2} A M^{-1/2} (M = control volumes)."""
    m = grid.volumes
    ab = op.bands
    off = ab[0, 1:] * np.sqrt(m[:-1] / m[1:])
    return ab[1].copy(), off


def lowest_eigenpair(grid, zero_tol=1e-6):
    """Lowest radial eigenpair of -Delta + V and the next eigenvalue.

    The finite-volume operator is symmetric in the control-volume inner
    product, so the symmetrized tridiagonal matrix is diagonalized by LAPACK
    bisection plus inverse iteration.  Eigenvalues above -zero_tol count as
    non-negative (the zero mode Lambda W carries a truncation-size shift).
    """
    op = assemble_radial_operator(grid, 0.0, background(grid).V)
    dg, off = _symmetric_tridiagonal(grid, op)
    vals, vecs = linalg.eigh_tridiagonal(dg, off, select="i", select_range=(0, 2))
    y = vecs[:, 0] / np.sqrt(grid.volumes)
    y = y * np.sign(y[0]) / np.abs(y).max()
    phi = RadialFunction(grid, y)
    res = op.apply(y) - vals[0] * y
    m = grid.volumes
    resid = float(np.sqrt(np.sum(m * res**2) / np.sum(m * y**2)))
    nneg = int(np.sum(vals < -zero_tol))
    return Eigenpair(float(vals[0]), phi, float(vals[1]), resid, nneg)


def rayleigh_quotient(grid, values, s=0.0):
    """<(L + V) f, f> / <f, f> in the control-volume inner product."""
    op = assemble_radial_operator(grid, s, background(grid).V)
    f = _values(values)
    m = grid.volumes
    return float(np.sum(m * op.apply(f) * f) / np.sum(m * f * f))


# ---------------------------------------------------------------------------
# scalar functionals


def _grid_for(params, s, grid):
    return grid if grid is not None else default_grid(params.d, s)


def _pair_vlw(grid, values):
    return float(ProjectionPair.on(grid).functional @ values)


def script_X(params, tau, grid=None):
    """delta(alpha(tau)) <(-Delta + alpha(tau))^{-1} W, V LambdaW>."""
    s = cf.alpha(params, tau)
    grid = _grid_for(params, s, grid)
    W = background(grid).W
    return cf.delta(params, s) * _pair_vlw(grid, _free(grid, s).solve(W.values))


def script_Wp(params, tau, grid=None):
    """<(-Delta + alpha(tau))^{-1} W^p, V LambdaW>."""
    s = cf.alpha(params, tau)
    grid = _grid_for(params, s, grid)
    W = background(grid).W
    return _pair_vlw(grid, _free(grid, s).solve(W.values**params.p))


def wp_decomposition(params, tau, grid=None):
    """Both sides of W_p = -<W^p, LW> + s <W^p, R_s LW> evaluated on the grid.

    The right side uses the discrete Laplacian of LambdaW in place of -V LambdaW,
    so the identity is exact up to round-off in the control-volume pairing;
    the second entry is the same right side with quadrature pairings.
    """
    s = cf.alpha(params, tau)
    grid = _grid_for(params, s, grid)
    bg = background(grid)
    solver = _free(grid, s)
    m = grid.volumes
    wp = bg.W.values**params.p
    lw = bg.LW.values
    lap_lw = solver.apply(lw) - s * lw
    lhs_disc = float(np.sum(m * solver.solve(wp) * (-lap_lw)))
    rlw = solver.solve(lw)
    rhs_disc = float(np.sum(m * wp * (-lw + s * rlw)))
    w = grid.weights
    rhs_quad = -float(w @ (wp * lw)) + s * float(w @ (wp * rlw))
    return lhs_disc, rhs_disc, script_Wp(params, tau, grid), rhs_quad


@dataclass
class A1Estimate:
    value: float
    order: float
    shifts: tuple
    samples: tuple
    fourier: float
    fourier_rel_diff: float


def _fit_three(ds, xs):
    """Fit X = A + C delta^gamma through three (delta, X) pairs."""
    (d1, d2, d3), (x1, x2, x3) = ds, xs
    q = (x1 - x2) / (x2 - x3)
    if not q > 0:
        raise ResolutionError("A1 sequence is not monotone; refine the grid")

    def h(g):
        return (d1**g - d2**g) / (d2**g - d3**g) - q

    lo, hi = 1e-3, 8.0
    if h(lo) * h(hi) > 0:
        raise ResolutionError("cannot fit a convergence order to the A1 sequence")
    g = optimize.brentq(h, lo, hi, xtol=1e-14)
    C = (x2 - x3) / (d2**g - d3**g)
    return x3 - C * d3**g, g


A1_SHIFTS = tuple(10.0**-k for k in range(2, 10))


def a1_extrapolation(params, grid=None, shifts=A1_SHIFTS):
    """delta(s) <R_s W, V LambdaW> over decreasing shifts, extrapolated to s = 0.

    The correction is O(delta) only asymptotically; for d = 4, delta = 1/log(1+1/s)
    decays so slowly that the fitted order approaches 1 only below s ~ 1e-7,
    hence the default ladder reaches 1e-9.
    """
    shifts = tuple(sorted(shifts, reverse=True))
    if len(shifts) < 3:
        raise ResolutionError("need at least three shifts")
    grid = _grid_for(params, shifts[-1], grid)
    W = background(grid).W.values
    xs = tuple(cf.delta(params, s) * _pair_vlw(grid, _free(grid, s).solve(W)) for s in shifts)
    diffs = np.diff(xs)
    if not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ResolutionError("A1 sequence is not monotone; refine the grid")
    ds = tuple(cf.delta(params, s) for s in shifts[-3:])
    val, order = _fit_three(ds, xs[-3:])
    if not val > 0:
        raise ResolutionError("extrapolated A1 is not positive")
    four = cf.a1_fourier(params)
    return A1Estimate(float(val), float(order), shifts, xs, four, abs(val - four) / four)


@lru_cache(maxsize=16)
def _a1_cached(d, n_inner, n_outer):
    params = cf.ModelParams(d, 4.0 if d == 3 else 2.0)
    grid = default_grid(d, A1_SHIFTS[-1], n_inner, n_outer)
    return a1_extrapolation(params, grid)


def compute_A1(params, n_inner=512, n_outer=2048):
    """Extrapolated A_1 (depends on d only); cached per resolution."""
    return _a1_cached(params.d, n_inner, n_outer).value


def fourier_integral_quadrature(d, s):
    """Quadrature of the integral over |xi| <= 1 of 1/((|xi|^2 + s)|xi|^2)."""
    if s <= 0:
        raise DomainError("s must be positive")
    val, _ = sint.quad(lambda r: r ** (d - 3) / (r * r + s), 0.0, 1.0, epsabs=0.0, epsrel=1e-13,
                       limit=200)
    return cf.sphere_area(d) * val
