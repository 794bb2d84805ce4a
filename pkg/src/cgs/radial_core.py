"""Radial grids, quadrature, norms, the H^1 scaling and the radial Laplacian.

The mesh is uniform on [0, 1] and geometric on [1, r_max] with the first
geometric cell equal to the uniform spacing, so the spacing is continuous and
every stencil below keeps its nominal order across r = 1.

Two discrete inner products live on a grid:
  * ``weights``: composite (nonuniform) Simpson weights times the sphere
    factor, used for all integrals and norms;
  * ``volumes``: finite-volume control volumes, the mass matrix in which the
    assembled operator is symmetric.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
from scipy import linalg, optimize, sparse
from scipy.interpolate import CubicHermiteSpline

from .closed_forms import sphere_area
from .errors import ConfigError, DivergenceError


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


def _geometric_ratio(h, length, n):
    """rho with h (rho^n - 1)/(rho - 1) = length, solved in log rho."""
    if abs(n * h - length) < 1e-14 * length:
        return 1.0
    f = lambda lr: h * math.expm1(n * lr) / math.expm1(lr) - length
    if n * h > length:
        return math.exp(optimize.brentq(f, -50.0 / n, -1e-14))
    return math.exp(optimize.brentq(f, 1e-14, 50.0 / n))


def simpson_weights(r):
    """Nonuniform composite Simpson weights for int g(r) dr on nodes r."""
    n = len(r) - 1
    if n % 2:
        raise ConfigError("Simpson rule needs an even number of cells")
    w = np.zeros(len(r))
    h1 = r[1:-1:2] - r[0:-2:2]
    h2 = r[2::2] - r[1:-1:2]
    s = h1 + h2
    w[0:-2:2] += s / 6.0 * (2.0 - h2 / h1)
    w[1:-1:2] += s**3 / (6.0 * h1 * h2)
    w[2::2] += s / 6.0 * (2.0 - h1 / h2)
    return w


@dataclass(frozen=True, eq=False)
class RadialGrid:
    d: int
    nodes: np.ndarray
    weights: np.ndarray
    volumes: np.ndarray
    conductances: np.ndarray
    r_max: float
    n_inner: int
    n_outer: int

    @property
    def n(self):
        return len(self.nodes)

    @property
    def h(self):
        """Uniform spacing on [0, 1]."""
        return 1.0 / self.n_inner

    @cached_property
    def _fd(self):
        return _fd_weights(self.nodes)

    def dilate(self, mu):
        """Grid with nodes mu * r (exact image under x -> mu x)."""
        return RadialGrid(self.d, _readonly(mu * self.nodes), _readonly(mu**self.d * self.weights),
                          _readonly(mu**self.d * self.volumes),
                          _readonly(mu ** (self.d - 2) * self.conductances),
                          mu * self.r_max, self.n_inner, self.n_outer)


def build_grid(d, r_max, n_inner, n_outer):
    if d not in (3, 4):
        raise ConfigError(f"d must be 3 or 4, got {d}")
    if not r_max > 1.0:
        raise ConfigError("r_max must exceed 1")
    if n_inner < 16 or n_outer < 16:
        raise ConfigError("grid counts must be at least 16")
    if n_inner % 2 or n_outer % 2:
        raise ConfigError("grid counts must be even (composite Simpson)")
    h = 1.0 / n_inner
    if n_outer * h > r_max - 1.0:
        raise ConfigError("n_outer too large for r_max: outer cells would shrink")
    rho = _geometric_ratio(h, r_max - 1.0, n_outer)
    outer = 1.0 + np.cumsum(h * rho ** np.arange(n_outer))
    outer[-1] = r_max
    r = np.concatenate([np.linspace(0.0, 1.0, n_inner + 1), outer])
    sig = sphere_area(d)
    weights = sig * r ** (d - 1) * simpson_weights(r)
    hs = np.diff(r)
    mid = 0.5 * (r[1:] + r[:-1])
    edges = np.concatenate([[0.0], mid, [r[-1]]])
    volumes = sig * (edges[1:] ** d - edges[:-1] ** d) / d
    cond = sig * mid ** (d - 1) / hs
    return RadialGrid(d, _readonly(r), _readonly(weights), _readonly(volumes), _readonly(cond),
                      float(r_max), int(n_inner), int(n_outer))


@dataclass(frozen=True, eq=False)
class RadialFunction:
    """Sampled radial profile, optionally with a power-law tail c r^{-gamma} beyond r_max."""

    grid: RadialGrid
    values: np.ndarray
    tail_exponent: float = None
    tail_amplitude: float = None
    check_tail: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.nodes.shape:
            raise ValueError("values must align with grid nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", _readonly(v))
        if self.tail_exponent is not None and self.tail_amplitude is None:
            c = fit_tail_amplitude(self.grid.nodes, v, self.tail_exponent)
            object.__setattr__(self, "tail_amplitude", c)
            if self.check_tail and self.tail_mismatch() > 0.05:
                raise ValueError(f"power tail r^-{self.tail_exponent} does not match the last nodes")

    def tail_mismatch(self):
        if self.tail_exponent is None:
            return 0.0
        r, v = self.grid.nodes[-5:], self.values[-5:]
        fit = self.tail_amplitude * r ** (-self.tail_exponent)
        scale = np.maximum(np.abs(v), 1e-300)
        return float(np.max(np.abs(fit - v) / scale)) if np.any(v != 0) else 0.0

    def like(self, values, tail_exponent=None, tail_amplitude=None):
        return RadialFunction(self.grid, values, tail_exponent, tail_amplitude, check_tail=False)

    def __call__(self, r):
        return monotone_cubic(self.grid, self.values)(r)


def fit_tail_amplitude(r, v, gamma, k=5):
    rr, vv = r[-k:], v[-k:]
    b = rr ** (-gamma)
    return float(np.dot(vv, b) / np.dot(b, b))


def fit_tail_exponent(f, k=5):
    """Log-log slope of |f| over the last k nodes, returned as a positive decay rate."""
    r, v = f.grid.nodes[-k:], np.abs(f.values[-k:])
    slope = np.polyfit(np.log(r), np.log(v), 1)[0]
    return float(-slope)


def tail_integral(grid, gamma, amp):
    """int_{r_max}^infty amp r^{-gamma} |S^{d-1}| r^{d-1} dr."""
    if amp == 0.0 or gamma is None:
        return 0.0
    d = grid.d
    if gamma <= d:
        raise DivergenceError(f"tail r^-{gamma} is not integrable in dimension {d}")
    return sphere_area(d) * amp * grid.r_max ** (d - gamma) / (gamma - d)


def integrate(f):
    total = float(np.dot(f.grid.weights, f.values))
    if f.tail_exponent is not None:
        total += tail_integral(f.grid, f.tail_exponent, f.tail_amplitude)
    return total


def power(f, m):
    """|f|^m with the tail exponent carried along."""
    vals = np.abs(f.values) ** m
    if f.tail_exponent is None:
        return f.like(vals)
    return f.like(vals, m * f.tail_exponent, abs(f.tail_amplitude) ** m)


def product(f, g):
    if f.grid is not g.grid:
        raise ValueError("functions live on different grids")
    if f.tail_exponent is None or g.tail_exponent is None:
        return f.like(f.values * g.values)
    return f.like(f.values * g.values, f.tail_exponent + g.tail_exponent,
                  f.tail_amplitude * g.tail_amplitude)


def lq_norm(f, q):
    if q < 1:
        raise ValueError("q must be >= 1")
    return integrate(power(f, q)) ** (1.0 / q)


def inner(f, g):
    return integrate(product(f, g))


def derivative_values(grid, values):
    """Fourth-order first derivative on the nonuniform mesh (even extension at 0)."""
    cols, w1, _ = grid._fd
    return np.einsum("ij,ij->i", w1, values[cols])


def monotone_cubic(grid, values):
    """Cubic Hermite interpolant with fourth-order nodal slopes, Fritsch-Carlson limited.

    On smooth data the limiter is inactive and the error is O(h^4); where the
    data are monotone on neighbouring cells the interpolant stays monotone.
    """
    r = grid.nodes
    v = np.asarray(values, dtype=float)
    m = derivative_values(grid, v).copy()
    sec = np.diff(v) / np.diff(r)
    flat = sec == 0.0
    # slopes must share the sign of the adjacent secants
    m[:-1][np.sign(m[:-1]) * np.sign(sec) < 0] = 0.0
    m[1:][np.sign(m[1:]) * np.sign(sec) < 0] = 0.0
    m[:-1][flat] = 0.0
    m[1:][flat] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(flat, 0.0, m[:-1] / sec)
        b = np.where(flat, 0.0, m[1:] / sec)
    # shrink both slopes of a cell with a^2 + b^2 > 9; a node takes the smaller factor
    rad = a * a + b * b
    tau = np.where(rad > 9.0, 3.0 / np.sqrt(np.maximum(rad, 9.0)), 1.0)
    node = np.ones_like(m)
    node[:-1] = tau
    node[1:] = np.minimum(node[1:], tau)
    m *= node
    return CubicHermiteSpline(r, v, m, extrapolate=False)


def derivative(f):
    vals = derivative_values(f.grid, f.values)
    if f.tail_exponent is None:
        return f.like(vals)
    return f.like(vals, f.tail_exponent + 1.0, -f.tail_exponent * f.tail_amplitude)


def gradient_norm_sq(f):
    """||grad f||_2^2 for radial f."""
    return integrate(power(derivative(f), 2.0))


def scale(f, lam):
    """T_lam[f](r) = lam^{-1} f(lam^{-2/(d-2)} r), resampled on the same grid.

    Beyond r_max the power tail is used when present and zero otherwise.
    """
    d = f.grid.d
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if lam == 1.0:
        return f
    r = f.grid.nodes
    x = lam ** (-2.0 / (d - 2)) * r
    inside = x <= f.grid.r_max
    vals = np.zeros_like(r)
    vals[inside] = monotone_cubic(f.grid, f.values)(x[inside])
    if f.tail_exponent is not None:
        vals[~inside] = f.tail_amplitude * x[~inside] ** (-f.tail_exponent)
        amp = f.tail_amplitude * lam ** (2.0 * f.tail_exponent / (d - 2))
        return f.like(vals / lam, f.tail_exponent, amp / lam)
    return f.like(vals / lam)


def scale_exact(f, lam):
    """T_lam[f] represented exactly on the dilated grid lam^{2/(d-2)} * nodes."""
    d = f.grid.d
    mu = lam ** (2.0 / (d - 2))
    g = f.grid.dilate(mu)
    amp = None
    if f.tail_exponent is not None:
        amp = f.tail_amplitude * mu**f.tail_exponent / lam
    return RadialFunction(g, f.values / lam, f.tail_exponent, amp, check_tail=False)


@dataclass(frozen=True, eq=False)
class RadialOperator:
    """Tridiagonal discretization of -u'' - (d-1)/r u' + s u + potential*u.

    ``bands`` is in the (1, 1) layout used by scipy.linalg.solve_banded.
    """

    grid: RadialGrid
    s: float
    bands: np.ndarray
    kappa: float

    def apply(self, u):
        ab = self.bands
        out = ab[1] * u
        out[:-1] += ab[0, 1:] * u[1:]
        out[1:] += ab[2, :-1] * u[:-1]
        return out

    def solve(self, rhs):
        return linalg.solve_banded((1, 1), self.bands, rhs, check_finite=False)

    def to_sparse(self):
        ab = self.bands
        return sparse.diags([ab[2, :-1], ab[1], ab[0, 1:]], [-1, 0, 1], format="csc")


def robin_kappa(d, s, r_max):
    """Far-field closure u' = -kappa u at r_max."""
    if s > 0:
        return math.sqrt(s) + (d - 1) / (2.0 * r_max)
    return (d - 2) / r_max


def assemble_radial_operator(grid, s, potential=None, robin=True):
    """Finite-volume radial operator with natural regularity at r = 0.

    Flux balance over control volumes gives a three-point stencil whose
    origin row encodes u'(0) = 0 and whose last row carries the Robin
    closure.  The matrix is symmetric in the ``volumes`` inner product.
    """
    if s < 0:
        raise ValueError("shift must be nonnegative")
    n, c, vol = grid.n, grid.conductances, grid.volumes
    diag = np.zeros(n)
    diag[:-1] += c
    diag[1:] += c
    kappa = robin_kappa(grid.d, s, grid.r_max) if robin else 0.0
    diag[-1] += sphere_area(grid.d) * grid.r_max ** (grid.d - 1) * kappa
    diag = diag / vol + s
    if potential is not None:
        pv = potential.values if isinstance(potential, RadialFunction) else np.asarray(potential)
        diag = diag + pv
    ab = np.zeros((3, n))
    ab[0, 1:] = -c / vol[:-1]
    ab[1] = diag
    ab[2, :-1] = -c / vol[1:]
    return RadialOperator(grid, float(s), ab, kappa)


def _fd_weights(r):
    """Five-point Fornberg weights for u' and u'' at every node.

    Nodes near the origin use the even reflection u(-r) = u(r); the last two
    nodes use a one-sided stencil.
    """
    n = len(r)
    ext = np.concatenate([-r[2:0:-1], r])
    idx = np.arange(n)[:, None] + 2 + np.arange(-2, 3)[None, :]
    idx[-2:] = np.arange(n - 5, n)[None, :] + 2
    x = ext[idx]
    cols = np.abs(idx - 2)
    off = x - r[:, None]
    scl = np.abs(off).max(axis=1, keepdims=True)
    xs = off / scl
    mats = np.stack([xs**m / math.factorial(m) for m in range(5)], axis=1)
    rhs = np.zeros((n, 5, 2))
    rhs[:, 1, 0] = 1.0
    rhs[:, 2, 1] = 1.0
    sol = np.linalg.solve(mats, rhs)
    w1 = sol[:, :, 0] / scl
    w2 = sol[:, :, 1] / scl**2
    return cols, w1, w2


def high_order_laplacian(grid, r_switch=1.0):
    """Sparse fourth-order approximation of -u'' - (d-1)/r u' (row 0: -d u''(0)).

    For r >= r_switch the stencil acts on v = r^{(d-1)/2} u through
    -Delta u = r^{-(d-1)/2} (-v'' + (d-1)(d-3)/(4 r^2) v).  The far field of W is
    harmonic, so -u'' and -(d-1)/r u' nearly cancel there; differencing them
    separately leaves truncation errors far larger than Delta u itself, while v
    varies slowly and its equation has no such cancellation.
    """
    cols, w1, w2 = grid._fd
    r = grid.nodes
    d = grid.d
    coef = -w2.copy()
    coef[1:] -= ((d - 1) / r[1:])[:, None] * w1[1:]
    coef[0] = -d * w2[0]
    far = r >= r_switch
    if np.any(far):
        k = (d - 1) / 2.0
        rf = r[far][:, None]
        cf_ = -w2[far] * (r[cols[far]] / rf) ** k
        centre = cols[far] == np.flatnonzero(far)[:, None]
        cf_ = cf_ + centre * ((d - 1) * (d - 3) / 4.0 / rf**2)
        coef[far] = cf_
    rows = np.repeat(np.arange(grid.n), 5)
    return sparse.csr_matrix((coef.ravel(), (rows, cols.ravel())), shape=(grid.n, grid.n))


def default_r_max(s_min=None):
    """max(1000, 32/sqrt(s_min)): the far field is resolved well past the Yukawa range."""
    if s_min is None or s_min <= 0:
        return 1000.0
    return max(1000.0, 32.0 / math.sqrt(s_min))


def default_grid(d, s_min=None, n_inner=512, n_outer=2048, r_max=None):
    return build_grid(d, default_r_max(s_min) if r_max is None else r_max, n_inner, n_outer)
