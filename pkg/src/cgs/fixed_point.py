"""Joint fixed point (tau, eta) for the rescaled equation, ground-state assembly,
parameter sweeps and the omega <-> t bridge.

With u = W + eta and s = alpha(tau) the rescaled equation
    -Delta u + s u - t|u|^{p-1}u - |u|^{4/(d-2)}u = 0
becomes (-Delta + s + V) eta = F(eta; s, t).  The scalar tau is fixed by the
solvability condition <(-Delta+s)^{-1} F, V LambdaW> = 0 (the map s_map), and
eta by the perturbed inverse (the map g_map).

Discretization.  Every linear solve uses the second-order finite-volume
operator L.  With ``order=4`` a deferred correction is folded into the forcing,
    F_h = F - c(eta),   c(eta) = (L_s W - s W - W^{2*-1}) + E (W + eta),
where E = L4 - L is the difference to a five-point fourth-order Laplacian
(zero on the last three rows, which carry the Robin closure).  The converged
u then satisfies L4 u + s u = t u^p + u^{2*-1}: fourth order in the interior,
while the finite-volume residual of u is the O(h^2) truncation error of L.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import math
import warnings

import numpy as np
from scipy import optimize, sparse
from scipy.sparse.linalg import splu

from . import closed_forms as cf
from . import nonlinear as nl
from .closed_forms import sphere_area
from .errors import BracketError, ConfigError, DivergenceError, DomainError, PositivityError
from .radial_core import (RadialFunction, assemble_radial_operator, build_grid, default_r_max,
                          high_order_laplacian, lq_norm, scale_exact)
from .resolvent import PerturbedSolver, ProjectionPair, background, compute_A1


@dataclass(frozen=True)
class FixedPointConfig:
    n_inner: int = 512
    n_outer: int = 16384
    r_max: float = None          # default: max(1000, 32/sqrt(s)) at the central tau
    q: float = None              # default rule of closed_forms.default_q
    order: int = 4               # 2: plain finite volumes, 4: deferred correction
    damping: float = 0.5
    tol_eta: float = 1e-10
    tol_tau: float = 1e-12
    tol_inner: float = 1e-14
    max_outer: int = 200
    max_inner: int = 500
    R: float = None              # radius of Y_q(R, t); calibrated when None

    def __post_init__(self):
        if self.order not in (2, 4):
            raise ConfigError("order must be 2 or 4")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError("damping must lie in (0, 1]")


class ContainmentWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# problem setup


class RescaledProblem:
    """Grid-dependent data shared by all iterations for one (params, grid, order)."""

    def __init__(self, params, grid, order=4):
        if grid.d != params.d:
            raise ConfigError("grid dimension differs from params.d")
        self.params, self.grid, self.order = params, grid, order
        bg = background(grid)
        self.W = bg.W.values
        self.Wp = self.W**params.p
        self.We = self.W**params.crit_power
        self.proj = ProjectionPair.on(grid)
        op0 = assemble_radial_operator(grid, 0.0)
        L0 = op0.to_sparse()
        if order == 4:
            E = (high_order_laplacian(grid) - L0).tolil()
            E[-3:, :] = 0.0
            self.E = E.tocsr()
            EW = self.E @ self.W
        else:
            self.E = None
            EW = 0.0
        # the s-independent part of the defect of W is formed once: recomputing
        # it per shift injects round-off that varies with tau
        self.defect0 = op0.apply(self.W) - self.We + EW
        self._robin_unit = sphere_area(grid.d) * grid.r_max ** (grid.d - 1) / grid.volumes[-1]
        self._kappa0 = op0.kappa
        self._ops = {}

    def operator(self, s):
        op = self._ops.get(s)
        if op is None:
            if len(self._ops) > 8:
                self._ops.clear()
            op = self._ops[s] = assemble_radial_operator(self.grid, s)
        return op

    def correction(self, eta, s):
        """c(eta) = L_s W - s W - W^{2*-1} + E (W + eta)."""
        c = self.defect0.copy()
        c[-1] += (self.operator(s).kappa - self._kappa0) * self._robin_unit * self.W[-1]
        if self.E is not None:
            c = c + self.E @ eta
        return c

    def forcing(self, eta, s, t):
        return nl.f_values(self.params, self.W, eta, s, t) - self.correction(eta, s)

    def pair(self, v):
        return self.proj.coef(v)

    def system(self, s):
        """Sparse matrix of the discrete operator acting on u: L_s (+ E)."""
        A = self.operator(s).to_sparse()
        return A + self.E if self.E is not None else A

    def polish(self, u, s, t, max_steps=20, rtol=1e-12, cut=1e-6):
        """Recompute the far field of u = W + eta directly in the variable u.

        Where u << W the sum W + eta cancels and carries absolute noise
        ~ eps * W, which can exceed u itself.  On the nodes beyond the first
        one with u < cut * W the system (L_s + E) u = t u^p + u^{2*-1} is
        re-solved by Newton with the core values as boundary data; the
        tail block is dominated by L_s and well conditioned, so u regains
        full relative accuracy there.  Returns (u, Newton steps).
        """
        u = np.array(u, dtype=float)
        small = np.flatnonzero(u < cut * self.W)
        if small.size == 0:
            return u, 0
        i0 = int(small[0])
        p, e = self.params.p, self.params.crit_power
        A = self.system(s).tocsr()
        At = A[i0:, i0:].tocsc()
        for k in range(1, max_steps + 1):
            tail = u[i0:]
            G = (A[i0:] @ u) - t * nl.odd_power(tail, p) - nl.odd_power(tail, e)
            at = np.abs(tail)
            J = At - sparse.diags(t * p * at ** (p - 1.0) + e * at ** (e - 1.0))
            du = splu(J.tocsc(), permc_spec="NATURAL").solve(G)
            u[i0:] = tail - du
            if np.all(np.abs(du) <= rtol * np.abs(u[i0:])):
                return u, k
        return u, max_steps


def build_problem_grid(params, t, config, Kp_over_A1=None):
    """Grid whose far field covers the Yukawa range at the central tau."""
    if config.r_max is not None:
        r_max = config.r_max
    else:
        k = Kp_over_A1 if Kp_over_A1 is not None else _ratio(params)
        tau = k * t
        if params.d == 4 and tau >= 1.0:
            raise DomainError("central tau outside the domain of alpha")
        r_max = default_r_max(cf.alpha(params, tau))
    return build_grid(params.d, r_max, config.n_inner, config.n_outer)


def _ratio(params):
    return cf.kp_closed_form(params) / compute_A1(params)


# ---------------------------------------------------------------------------
# the maps s and g


@dataclass
class SMapParts:
    X: float       # delta <R W, VLW>
    Wp: float      # <R W^p, VLW>
    Nn: float      # <R (N - c), VLW>
    value: float


def s_map_parts(problem, t, tau, eta):
    params = problem.params
    s = cf.alpha(params, tau)
    op = problem.operator(s)
    rhs = np.column_stack([problem.W, problem.Wp,
                           nl.n_values(params, problem.W, eta, t) - problem.correction(eta, s)])
    sol = op.solve(rhs)
    X = cf.delta(params, s) * problem.pair(sol[:, 0])
    if abs(X) < 1e-12:
        raise DivergenceError(f"degenerate X(tau) = {X:.3e}")
    Wp = problem.pair(sol[:, 1])
    Nn = problem.pair(sol[:, 2])
    return SMapParts(X, Wp, Nn, (t * Wp + Nn) / X)


def s_map(problem, t, tau, eta):
    return s_map_parts(problem, t, tau, _vals(eta)).value


def g_map(problem, t, tau, eta, solver=None):
    eta = _vals(eta)
    s = cf.alpha(problem.params, tau)
    if solver is None:
        solver = PerturbedSolver.build(problem.grid, s)
    return solver.solve_rhs(problem.forcing(eta, s, t))


def orthogonality_defect(problem, t, tau, eta):
    """<(-Delta+s)^{-1} F_h, VLW>, relative to the size of its two largest parts."""
    eta = _vals(eta)
    s = cf.alpha(problem.params, tau)
    op = problem.operator(s)
    F = problem.forcing(eta, s, t)
    val = problem.pair(op.solve(F))
    pos = problem.pair(op.solve(t * problem.Wp))
    return val / max(abs(pos), 1e-300)


def _vals(f):
    return f.values if isinstance(f, RadialFunction) else np.asarray(f, dtype=float)


# ---------------------------------------------------------------------------
# iteration


@dataclass
class FixedPointState:
    params: cf.ModelParams
    t: float
    tau: float
    eta: RadialFunction
    alpha: float
    iter_count: int
    contraction_ratio: float
    contraction_ratios: list
    tau_residual: float
    eta_residual: float
    eta_norm: float
    q: float
    R: float
    interval: tuple
    in_interval: bool
    in_ball: bool
    order: int
    inner_iterations: list = field(default_factory=list, repr=False)
    problem: object = field(default=None, repr=False)

    @property
    def max_contraction(self):
        return max(self.contraction_ratios) if self.contraction_ratios else 0.0

    @property
    def ball_radius(self):
        return self.R * cf.alpha(self.params, self.t) ** cf.compute_exponents(self.params, self.q).theta_big


def solve_tau(problem, t, eta, tau0, damping=0.5, tol=1e-14, max_iter=500):
    """Damped iteration tau <- (1-d) tau + d s(t; tau, eta) for fixed eta."""
    tau = tau0
    prev = math.inf
    for k in range(1, max_iter + 1):
        new = s_map(problem, t, tau, eta)
        if not (math.isfinite(new) and new > 0):
            raise DivergenceError(f"tau iteration left the domain (s_map = {new})")
        step = damping * (new - tau)
        tau = tau + step
        if problem.params.d == 4 and tau >= 1.0:
            raise DivergenceError("tau iteration left the domain of alpha")
        if abs(step) <= tol * tau:
            return tau, k
        # round-off plateau: the step stopped shrinking at a negligible size
        if abs(step) >= 0.9 * prev and abs(step) <= 1e-13 * tau:
            return tau, k
        prev = abs(step)
    raise DivergenceError(f"tau iteration did not converge in {max_iter} steps")


def calibrate_R(problem, t, q, theta_big):
    """10 * ||g(t; (K_p/A_1) t, 0)||_q / alpha(t)^Theta_q."""
    tau0 = _ratio(problem.params) * t
    g = g_map(problem, t, tau0, np.zeros(problem.grid.n))
    return 10.0 * _lq(problem.grid, g, q) / cf.alpha(problem.params, t) ** theta_big


def _lq(grid, v, q):
    return float(np.dot(grid.weights, np.abs(v) ** q)) ** (1.0 / q)


def solve_fixed_point(params, t, config=None, grid=None, tau0=None, eta0=None, problem=None):
    """Nested iteration: tau = s(t; tau, eta) for fixed eta, then eta <- g(t; tau, eta)."""
    config = config or FixedPointConfig()
    if not t > 0:
        raise DomainError("t must be positive")
    if params.d == 4 and t >= 1.0:
        raise DomainError("for d=4 alpha(t) requires t < 1")
    ratio = _ratio(params)
    if problem is None:
        grid = grid or build_problem_grid(params, t, config, ratio)
        problem = RescaledProblem(params, grid, config.order)
    grid = problem.grid
    expo = cf.compute_exponents(params, config.q)
    q = expo.q
    a_t = cf.alpha(params, t)
    ball_scale = a_t**expo.theta_big
    R = config.R if config.R is not None else calibrate_R(problem, t, q, expo.theta_big)
    tau = ratio * t if tau0 is None else float(tau0)
    eta = np.zeros(grid.n) if eta0 is None else _vals(eta0).copy()
    ratios, inner_counts = [], []
    prev_diff, bad = None, 0
    tau_prev = None
    for k in range(1, config.max_outer + 1):
        tau, n_in = solve_tau(problem, t, eta, tau, config.damping, config.tol_inner, config.max_inner)
        inner_counts.append(n_in)
        new = g_map(problem, t, tau, eta)
        if not np.all(np.isfinite(new)):
            raise DivergenceError(f"eta iterate is not finite at step {k}")
        scale = max(_lq(grid, new, q), ball_scale)
        diff = _lq(grid, new - eta, q) / scale
        eta = new
        # ratios are meaningful only well above the round-off floor (~1e-12)
        if prev_diff is not None and prev_diff > 1e-9:
            r = diff / prev_diff
            ratios.append(r)
            bad = bad + 1 if r >= 1.0 else 0
            if bad >= 5:
                raise DivergenceError(f"no contraction at t={t}: ratios {ratios[-5:]}")
        prev_diff = diff
        tau_ok = tau_prev is not None and abs(tau - tau_prev) <= config.tol_tau * tau
        tau_prev = tau
        if diff < config.tol_eta and tau_ok:
            break
    else:
        raise DivergenceError(f"fixed point not reached in {config.max_outer} outer steps at t={t}")
    # tau was solved for the previous eta; re-solve it for the final one (g is
    # amplified by ~delta/s off the solvability curve tau = s(t; tau, eta))
    tau, n_in = solve_tau(problem, t, eta, tau, config.damping, config.tol_inner, config.max_inner)
    inner_counts.append(n_in)
    # joint residuals of both equations at the final pair
    tau_res = abs(tau - s_map(problem, t, tau, eta)) / tau
    g = g_map(problem, t, tau, eta)
    eta_norm = _lq(grid, eta, q)
    eta_res = _lq(grid, eta - g, q) / max(eta_norm, ball_scale)
    lo, hi = cf.interval_I(t, cf.kp_closed_form(params), compute_A1(params))
    in_I = lo <= tau <= hi
    in_ball = eta_norm <= R * ball_scale
    if not (in_I and in_ball):
        warnings.warn(f"fixed point at t={t} outside the contraction box "
                      f"(tau in I: {in_I}, eta in Y: {in_ball})", ContainmentWarning)
    eta_f = RadialFunction(grid, eta, grid.d - 2.0, check_tail=False)
    return FixedPointState(params, float(t), float(tau), eta_f, cf.alpha(params, tau), k,
                           ratios[-1] if ratios else 0.0, ratios, tau_res, eta_res, eta_norm, q,
                           float(R), (lo, hi), in_I, in_ball, config.order, inner_counts, problem)


# ---------------------------------------------------------------------------
# ground state


@dataclass
class GroundState:
    u: RadialFunction
    t: float
    tau: float
    alpha: float
    pde_residual: float          # L^inf of the finite-volume residual
    pde_residual_rel: float      # divided by ||u^{2*-1}||_inf
    nehari_value: float          # relative to ||grad u||^2
    pohozaev_value: float        # normalized Pohozaev residual
    action_value: float
    positive: bool
    decreasing: bool
    polish_steps: int = 0


def fv_residual(params, u_vals, grid, s, t):
    op = assemble_radial_operator(grid, s)
    return (op.apply(u_vals) - t * nl.odd_power(u_vals, params.p)
            - nl.odd_power(u_vals, params.crit_power))


def assemble_ground_state(state, polish=True):
    params, grid = state.params, state.eta.grid
    u_vals = background(grid).W.values + state.eta.values
    steps = 0
    if polish and state.problem is not None:
        u_vals, steps = state.problem.polish(u_vals, state.alpha, state.t)
    if np.any(u_vals <= 0):
        i = int(np.argmax(u_vals <= 0))
        raise PositivityError(f"u is not positive at node {i} (r = {grid.nodes[i]:.4g})")
    res = fv_residual(params, u_vals, grid, state.alpha, state.t)
    u = RadialFunction(grid, u_vals)
    mode = nl.RescaledParams(state.alpha, state.t)
    crit_scale = float(np.abs(u_vals).max() ** params.crit_power)
    return GroundState(u, state.t, state.tau, state.alpha, float(np.abs(res).max()),
                       float(np.abs(res).max() / crit_scale), nl.nehari_relative(params, u, mode),
                       nl.pohozaev_residual(params, u, state.alpha, state.t),
                       nl.action(params, u, mode), True, bool(np.all(np.diff(u_vals) < 0)),
                       steps)


# ---------------------------------------------------------------------------
# sweeps


def _sweep_entry(args):
    params, t, config = args
    try:
        st = solve_fixed_point(params, t, config)
        gs = assemble_ground_state(st)
        expo = cf.compute_exponents(params, st.q)
        a_t = cf.alpha(params, t)
        W = background(st.eta.grid).W.values
        r = st.eta.grid.nodes
        return dict(t=t, ok=True, tau=st.tau, tau_over_t=st.tau / t, alpha=st.alpha,
                    eta_norm=st.eta_norm, eta_scaled=st.eta_norm / a_t**expo.theta_big,
                    tau_residual=st.tau_residual, eta_residual=st.eta_residual,
                    max_contraction=st.max_contraction, iterations=st.iter_count,
                    in_interval=st.in_interval, in_ball=st.in_ball, R=st.R,
                    pde_residual=gs.pde_residual, nehari=gs.nehari_value,
                    pohozaev=gs.pohozaev_value,
                    decay_sup=float(np.max((1.0 + r) ** (params.d - 2) * np.abs(W + st.eta.values))))
    except Exception as exc:  # per-entry failures are recorded, the sweep continues
        return dict(t=t, ok=False, error=f"{type(exc).__name__}: {exc}")


@dataclass
class SweepReport:
    records: list
    monotone_tau: bool
    ratio_trend: bool
    eta_slope: float
    theta_big: float
    kp_over_a1: float


def sweep(params, t_values, config=None, parallel=None):
    """Fixed points over decreasing t; R is calibrated once at the largest t."""
    config = config or FixedPointConfig()
    ts = sorted((float(t) for t in t_values), reverse=True)
    if config.R is None:
        t0 = ts[0]
        grid = build_problem_grid(params, t0, config)
        prob = RescaledProblem(params, grid, config.order)
        q = cf.compute_exponents(params, config.q)
        config = replace(config, R=calibrate_R(prob, t0, q.q, q.theta_big))
    jobs = [(params, t, config) for t in ts]
    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            records = list(ex.map(_sweep_entry, jobs))
    else:
        records = [_sweep_entry(j) for j in jobs]
    ok = [r for r in records if r["ok"]]
    ratio = _ratio(params)
    taus = [r["tau"] for r in ok]
    dev = [abs(r["tau_over_t"] - ratio) for r in ok]
    monotone = all(a > b for a, b in zip(taus, taus[1:]))
    trend = all(a > b for a, b in zip(dev, dev[1:]))
    expo = cf.compute_exponents(params, config.q)
    slope = float("nan")
    if len(ok) >= 2:
        x = np.log([cf.alpha(params, r["t"]) for r in ok])
        y = np.log([r["eta_norm"] for r in ok])
        slope = float(np.polyfit(x, y, 1)[0])
    return SweepReport(records, monotone, trend, slope, expo.theta_big, ratio)


def admissible_t(params, config=None, t_start=0.5, max_halvings=12):
    """Largest t on the ladder t_start / 2^k at which the iteration contracts with ratio < 0.9."""
    config = config or FixedPointConfig()
    t = t_start
    for _ in range(max_halvings + 1):
        if params.d == 4 and t >= 1.0:
            t *= 0.5
            continue
        try:
            st = solve_fixed_point(params, t, config)
            if st.max_contraction < 0.9:
                return t
        except (DivergenceError, DomainError, PositivityError):
            pass
        t *= 0.5
    raise DivergenceError("no admissible t found on the ladder")


@dataclass
class UniquenessProbe:
    reference: FixedPointState
    from_low: FixedPointState
    from_high: FixedPointState
    tau_diff: float              # max relative tau difference to the reference
    eta_diff: float              # max L^inf difference of eta, relative to ||W||_inf = 1


def uniqueness_probe(params, t, config=None):
    """Restart the iteration from both ends of I(t): (lo, 0) and (hi, 1.1 eta_t)."""
    config = config or FixedPointConfig()
    ref = solve_fixed_point(params, t, config)
    problem = ref.problem
    if config.R is None:
        config = replace(config, R=ref.R)
    lo, hi = ref.interval
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ContainmentWarning)
        a = solve_fixed_point(params, t, config, tau0=lo, eta0=np.zeros(problem.grid.n),
                              problem=problem)
        b = solve_fixed_point(params, t, config, tau0=hi, eta0=1.1 * ref.eta.values,
                              problem=problem)
    tau_diff = max(abs(a.tau - ref.tau), abs(b.tau - ref.tau), abs(a.tau - b.tau)) / ref.tau
    eta_diff = max(np.abs(a.eta.values - ref.eta.values).max(),
                   np.abs(b.eta.values - ref.eta.values).max(),
                   np.abs(a.eta.values - b.eta.values).max())
    return UniquenessProbe(ref, a, b, float(tau_diff), float(eta_diff))


# ---------------------------------------------------------------------------
# bridge omega <-> t


@dataclass
class BridgeResult:
    omega: float
    t_of_omega: float
    lambda_of_omega: float
    Phi: RadialFunction
    tau: float
    alpha: float
    matching_residual: float     # |G(t)| / tau
    omega_roundtrip: float       # relative error of alpha(tau) t^{-k} vs omega
    residual_original: float     # L^inf FV residual of the original equation
    residual_original_rel: float
    nehari_original: float       # relative to ||grad Phi||^2
    state: FixedPointState = field(repr=False)
    evaluations: int = 0


def bridge_exponent(params):
    """k = (2* - 2)/(2* - (p+1))."""
    return (params.two_star - 2.0) / params.sobolev_gap


def leading_order_t(params, omega):
    """Root of (K_p/A_1) t = beta(omega t^k), the leading-order matching."""
    k = bridge_exponent(params)
    c = _ratio(params)

    def G(lt):
        t = math.exp(lt)
        x = omega * t**k
        return math.log(c * t) - math.log(cf.beta(params, x))

    lo, hi = -60.0, 0.0
    if params.d == 4:
        hi = -1e-9
    if G(lo) * G(hi) > 0:
        raise BracketError("no leading-order intersection for this omega")
    return math.exp(optimize.brentq(G, lo, hi, xtol=1e-14))


def bridge_omega(params, omega, config=None, bracket=None, xtol=1e-14):
    """Solve tau_t = beta(omega t^k) for t by Brent's method, then rescale back."""
    config = config or FixedPointConfig()
    if not omega > 0:
        raise DomainError("omega must be positive")
    k = bridge_exponent(params)
    if bracket is None:
        t_c = leading_order_t(params, omega)
        bracket = (0.5 * t_c, 2.0 * t_c)
    t_lo, t_hi = bracket
    if params.d == 4:
        t_hi = min(t_hi, 0.99)
    # one grid for every evaluation, covering the smallest alpha on the bracket
    ratio = _ratio(params)
    r_max = config.r_max or default_r_max(cf.alpha(params, 0.5 * ratio * t_lo))
    grid = build_grid(params.d, r_max, config.n_inner, config.n_outer)
    problem = RescaledProblem(params, grid, config.order)
    if config.R is None:
        q = cf.compute_exponents(params, config.q)
        config = replace(config, R=calibrate_R(problem, t_hi, q.q, q.theta_big))
    cache = {}

    def G(t):
        if t not in cache:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ContainmentWarning)
                st = solve_fixed_point(params, t, config, problem=problem)
            cache[t] = st
        st = cache[t]
        return st.tau - cf.beta(params, omega * t**k)

    g_lo, g_hi = G(t_lo), G(t_hi)
    if g_lo * g_hi > 0:
        raise BracketError(f"G(t) has no sign change on [{t_lo:.3g}, {t_hi:.3g}]; omega too small?")
    t_star = optimize.brentq(G, t_lo, t_hi, xtol=xtol * t_lo, rtol=1e-15, maxiter=200)
    G(t_star)
    st = cache[t_star]
    match = abs(G(t_star)) / st.tau
    lam = t_star ** (-1.0 / params.sobolev_gap)
    u = assemble_ground_state(st).u
    Phi = scale_exact(u, 1.0 / lam)
    res = fv_residual(params, Phi.values, Phi.grid, omega, 1.0)
    crit = float(np.abs(Phi.values).max() ** params.crit_power)
    omega_back = st.alpha * t_star ** (-k)
    nehari = nl.nehari_relative(params, Phi, nl.RescaledParams.original(omega))
    return BridgeResult(float(omega), float(t_star), float(lam), Phi, st.tau, st.alpha, float(match),
                        abs(omega_back - omega) / omega, float(np.abs(res).max()),
                        float(np.abs(res).max() / crit), float(nehari), st, len(cache))
