"""Command-line entry point: verify | solve | sweep | bridge | probe-resolvent.

Configuration is layered: built-in defaults, then an optional flat
``key = value`` file (``--config``), then command-line flags.  Every command
emits a report with schema tag ``cgs-report/1`` holding the config echo,
per-run records, pass/fail checks (each with its tolerance) and fitted
exponents.  Exit codes: 0 all checks pass, 2 numeric failure, 3 config or
domain error.
"""

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import closed_forms as cf
from . import fixed_point as fp
from . import nonlinear as nl
from . import oracle
from . import resolvent as rs
from .errors import CGSError, ConfigError, DivergenceError, DomainError
from .radial_core import (RadialFunction, assemble_radial_operator, build_grid, default_r_max,
                          inner, integrate, lq_norm, power)

SCHEMA = "cgs-report/1"
EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3
PROBE_SHIFTS = (1e-2, 1e-3, 1e-4)
HALVING_ALLOWANCE = 0.01        # second-order ratios approach 4 from below

log = logging.getLogger("cgs")


@dataclass(frozen=True)
class RunConfig:
    d: int = 3
    p: float = None              # default 4 (d=3) or 2 (d=4)
    q: float = None              # default rule of closed_forms.default_q
    n_inner: int = 512
    n_outer: int = None          # default 2048 (verify, probes) or 16384 (fixed point)
    r_max: float = None          # default max(1000, 32/sqrt(s_min))
    tol_fp: float = 1e-10        # fixed-point eta tolerance (--tol)
    tol_identity: float = 1e-5   # identity residuals of verify
    tol_quad: float = 1e-7       # K_p quadrature agreement
    tol_shoot: float = 1e-12     # bisection width of the shooting oracle
    t: tuple = (1e-2, 1e-3, 1e-4)
    omega: tuple = (1e4,)
    out: str = None
    format: str = "json"
    parallel: int = 1
    seed: int = 0

    @property
    def params(self):
        return cf.ModelParams(self.d, self.p)

    def validate(self):
        if self.d not in (3, 4):
            raise ConfigError(f"d must be 3 or 4, got {self.d}")
        try:
            self.params
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("n_inner", "n_outer"):
            n = getattr(self, name)
            if n is not None and (n < 16 or n % 2):
                raise ConfigError(f"{name} must be an even count >= 16, got {n}")
        if self.r_max is not None and not self.r_max > 1.0:
            raise ConfigError("r_max must exceed 1")
        if self.q is not None:
            try:
                cf.compute_exponents(self.params, self.q)
            except DomainError as exc:
                raise ConfigError(str(exc)) from exc
        for name in ("tol_fp", "tol_identity", "tol_quad", "tol_shoot"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.t or any(not v > 0 for v in self.t):
            raise ConfigError("t values must be positive")
        if not self.omega or any(not v > 0 for v in self.omega):
            raise ConfigError("omega values must be positive")
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")
        return self

    def fixed_point_config(self):
        return fp.FixedPointConfig(n_inner=self.n_inner, n_outer=self.n_outer or 16384,
                                   r_max=self.r_max, q=self.q, tol_eta=self.tol_fp)


# ---------------------------------------------------------------------------
# configuration


def _convert(name, raw):
    """Parse one config value according to the RunConfig field type."""
    try:
        if name in ("d", "n_inner", "n_outer", "parallel", "seed"):
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if name in ("t", "omega"):
            return tuple(float(x) for x in str(raw).replace(",", " ").split())
        if name in ("out", "format"):
            return str(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def parse_config_text(text):
    """Flat ``key = value`` lines; '#' starts a comment; unknown keys rejected."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, val)
    return out


def build_config(file_values=None, overrides=None):
    vals = dict(file_values or {})
    vals.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(vals) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    d = vals.get("d", 3)
    if "p" not in vals and d in (3, 4):
        vals["p"] = 4.0 if d == 3 else 2.0
    return RunConfig(**vals).validate()


# ---------------------------------------------------------------------------
# reports


def _plain(x):
    """Convert numpy scalars and tuples into JSON-native values."""
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def check(name, lhs, rhs, rel_error, tol, passed=None):
    if passed is None:
        passed = bool(rel_error <= tol)
    return dict(name=name, lhs=lhs, rhs=rhs, rel_error=rel_error, tol=tol, passed=bool(passed))


def make_report(command, config, records, checks, fits=None):
    rep = dict(schema=SCHEMA, command=command, config=asdict(config), records=records,
               checks=checks, fits=fits or {}, passed=all(c["passed"] for c in checks))
    return _plain(rep)


def report_json(report):
    return json.dumps(report, indent=2, sort_keys=False)


def report_csv(report):
    """One row per record and per check; floats keep full repr precision."""
    rows = [dict(kind="record", **r) for r in report["records"]]
    rows += [dict(kind="check", **c) for c in report["checks"]]
    rows += [dict(kind="fit", name=k, value=v) for k, v in report["fits"].items()]
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: json.dumps(v) if isinstance(v, list) else v for k, v in r.items()})
    return buf.getvalue()


def emit(report, config, stream=None):
    text = report_json(report) if config.format == "json" else report_csv(report)
    if config.out:
        with open(config.out, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        stream = stream or sys.stdout
        stream.write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------------------
# verify: closed-form identity suite


def _identity_residuals(params, n_inner, n_outer, r_max):
    grid = build_grid(params.d, r_max, n_inner, n_outer)
    bg = rs.background(grid)
    W, LW, V = bg.W.values, bg.LW.values, bg.V.values
    e = params.crit_power
    L0 = assemble_radial_operator(grid, 0.0)
    zero = rs.zero_energy_inverse(bg.VLW).values
    return grid, {
        "-Delta W = W^(2*-1)": np.abs(L0.apply(W) - W**e).max() / np.abs(W**e).max(),
        "(-Delta + V) LW = 0": np.abs(L0.apply(LW) + V * LW).max() / np.abs(V * LW).max(),
        "(-Delta)^-1 V LW = -LW": np.abs(zero + LW).max() / np.abs(LW).max(),
    }


def identity_checks(config):
    params = config.params
    n_in, n_out = config.n_inner, config.n_outer or 2048
    r_max = config.r_max or default_r_max()
    grid, res = _identity_residuals(params, n_in, n_out, r_max)
    _, res_fine = _identity_residuals(params, 2 * n_in, 2 * n_out, r_max)
    checks, records = [], []
    for name, val in res.items():
        ratio = val / res_fine[name] if res_fine[name] > 0 else math.inf
        checks.append(check(name, val, 0.0, val, config.tol_identity))
        checks.append(check(name + " : halving ratio", ratio, 4.0, max(0.0, 1.0 - ratio / 4.0),
                            HALVING_ALLOWANCE))
        records.append(dict(identity=name, residual=val, residual_halved=res_fine[name],
                            ratio=ratio))
    bg = rs.background(grid)
    ts = params.two_star
    scale = lq_norm(bg.W, ts) * lq_norm(bg.VLW, ts / (ts - 1.0))
    val = inner(bg.W, bg.VLW)
    checks.append(check("<W, V LW> = 0", val, 0.0, abs(val) / scale, 1e-8))
    for r in dict.fromkeys((2.0, params.p, params.crit_power)):
        name = f"<W^{r:g}, LW> closed form"
        try:
            exact = cf.w_lambda_pairing(params, r)
        except CGSError:
            exact = None
        try:
            quad = inner(power(bg.W, r), bg.LW)
        except CGSError:
            quad = None
        if exact is None or quad is None:
            # both sides must diverge together (d=3, r=2: W^2 LW ~ r^-3)
            both = exact is None and quad is None
            checks.append(check(name + " (divergent)", "divergent" if quad is None else quad,
                                "divergent" if exact is None else exact, 0.0 if both else math.inf,
                                0.0, both))
            continue
        absint = integrate(RadialFunction(grid, np.abs(bg.W.values**r * bg.LW.values),
                                          check_tail=False))
        checks.append(check(name, quad, exact, abs(quad - exact) / absint, 1e-8))
    try:
        kp = nl.compute_Kp(params, rtol=config.tol_quad)
        checks.append(check("K_p quadrature", kp, cf.kp_closed_form(params), 0.0, config.tol_quad))
    except CGSError as exc:
        checks.append(check("K_p quadrature", str(exc), cf.kp_closed_form(params), math.inf,
                            config.tol_quad))
    for s in (0.25, 1.0, 4.0):
        quad = rs.fourier_integral_quadrature(params.d, s)
        exact = cf.fourier_integral_closed_form(params.d, s)
        checks.append(check(f"Fourier integral s={s:g}", quad, exact, abs(quad - exact) / exact,
                            1e-6))
    return records, checks


def cmd_verify(config):
    records, checks = identity_checks(config)
    return make_report("verify", config, records, checks)


# ---------------------------------------------------------------------------
# solve / sweep / bridge


def _state_record(st, gs):
    return dict(t=st.t, tau=st.tau, tau_over_t=st.tau / st.t, alpha=st.alpha,
                interval_lo=st.interval[0], interval_hi=st.interval[1],
                in_interval=st.in_interval, eta_norm=st.eta_norm, ball_radius=st.ball_radius,
                in_ball=st.in_ball, q=st.q, R=st.R, iterations=st.iter_count,
                max_contraction=st.max_contraction, tau_residual=st.tau_residual,
                eta_residual=st.eta_residual, pde_residual=gs.pde_residual,
                pde_residual_rel=gs.pde_residual_rel, nehari=gs.nehari_value,
                pohozaev=gs.pohozaev_value, action=gs.action_value, positive=gs.positive,
                decreasing=gs.decreasing, u0=float(gs.u.values[0]))


def _ground_state_checks(rec, label=""):
    return [
        check(label + "tau in I(t)", rec["tau"], [rec["interval_lo"], rec["interval_hi"]],
              0.0, 0.0, rec["in_interval"]),
        check(label + "eta in Y_q(R,t)", rec["eta_norm"], rec["ball_radius"],
              rec["eta_norm"] / rec["ball_radius"], 1.0),
        check(label + "contraction ratio", rec["max_contraction"], 0.9, rec["max_contraction"], 0.9),
        check(label + "tau residual", rec["tau_residual"], 0.0, rec["tau_residual"], 1e-12),
        check(label + "eta residual", rec["eta_residual"], 0.0, rec["eta_residual"], 1e-10),
        check(label + "Nehari", rec["nehari"], 0.0, abs(rec["nehari"]), 1e-6),
        check(label + "Pohozaev", rec["pohozaev"], 0.0, abs(rec["pohozaev"]), 1e-6),
        check(label + "PDE residual", rec["pde_residual_rel"], 0.0, rec["pde_residual_rel"], 1e-4),
        check(label + "positive and decreasing", rec["positive"], rec["decreasing"], 0.0, 0.0,
              rec["positive"] and rec["decreasing"]),
    ]


def _divergence_hint(params, t, fpc):
    try:
        t_ok = fp.admissible_t(params, fpc, t_start=0.5 * t, max_halvings=6)
        return f"largest admissible t on the ladder below {t:g}: {t_ok:g}"
    except CGSError:
        return "no admissible t found on the ladder below the requested value"


def cmd_solve(config, t=None):
    params = config.params
    t = config.t[0] if t is None else t
    if params.d == 4 and t >= 1.0:
        raise DomainError("for d=4 alpha(t) requires t < 1")
    fpc = config.fixed_point_config()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", fp.ContainmentWarning)
            st = fp.solve_fixed_point(params, t, fpc)
    except DivergenceError as exc:
        hint = _divergence_hint(params, t, fpc)
        log.error("divergence at t=%g: %s; %s", t, exc, hint)
        rec = dict(t=t, ok=False, error=str(exc), hint=hint)
        return make_report("solve", config, [rec],
                           [check("fixed point converged", str(exc), "converged", math.inf, 0.0,
                                  False)])
    gs = fp.assemble_ground_state(st)
    rec = _state_record(st, gs)
    sh = oracle.find_ground_state_shooting(params, st.alpha, t, grid=st.eta.grid,
                                           guess=gs.u.values[0], rel_width=config.tol_shoot)
    linf, lq = oracle.compare_profiles(sh.profile, gs.u, st.q)
    rec.update(oracle_u0=sh.u0, oracle_linf=linf, oracle_lq=lq, oracle_r_match=sh.r_match)
    checks = _ground_state_checks(rec)
    checks.append(check("oracle L^inf agreement", linf, 0.0, linf, 1e-5))
    return make_report("solve", config, [rec], checks)


def _limit_estimate(ts, ys):
    """Intercept of a least-squares line y = L + b t (the t -> 0 limit)."""
    if len(ts) < 2:
        return float(ys[0]) if ys else float("nan")
    b, L = np.polyfit(np.asarray(ts), np.asarray(ys), 1)
    return float(L)


def cmd_sweep(config):
    params = config.params
    ts = sorted(config.t, reverse=True)
    if params.d == 4 and ts[0] >= 1.0:
        raise DomainError("for d=4 alpha(t) requires t < 1")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fp.ContainmentWarning)
        rep = fp.sweep(params, ts, config.fixed_point_config(),
                       parallel=config.parallel if config.parallel > 1 else None)
    records = rep.records
    checks = [check(f"t={r['t']:g} converged", r.get("error", "ok"), "ok", 0.0, 0.0, r["ok"])
              for r in records]
    ok = [r for r in records if r["ok"]]
    for r in ok:
        lab = f"t={r['t']:g}: "
        checks += [
            check(lab + "contraction ratio", r["max_contraction"], 0.9, r["max_contraction"], 0.9),
            check(lab + "tau in I(t)", r["tau"], "I(t)", 0.0, 0.0, r["in_interval"]),
            check(lab + "eta in Y_q(R,t)", r["eta_scaled"], r["R"], r["eta_scaled"] / r["R"], 1.0),
        ]
    checks.append(check("tau strictly increasing in t", rep.monotone_tau, True, 0.0, 0.0,
                        rep.monotone_tau))
    checks.append(check("|tau/t - K_p/A_1| strictly decreasing", rep.ratio_trend, True, 0.0, 0.0,
                        rep.ratio_trend))
    if len(ok) >= 2:
        checks.append(check("eta-norm slope >= Theta_q - 0.05", rep.eta_slope,
                            rep.theta_big - 0.05, max(0.0, rep.theta_big - rep.eta_slope), 0.05))
    fits = dict(kp_over_a1=rep.kp_over_a1,
                tau_over_t_limit=_limit_estimate([r["t"] for r in ok],
                                                 [r["tau_over_t"] for r in ok]),
                eta_slope=rep.eta_slope, theta_big=rep.theta_big)
    return make_report("sweep", config, records, checks, fits)


def cmd_bridge(config):
    params = config.params
    records, checks = [], []
    for omega in config.omega:
        try:
            b = fp.bridge_omega(params, omega, config.fixed_point_config())
        except CGSError as exc:
            records.append(dict(omega=omega, ok=False, error=f"{type(exc).__name__}: {exc}"))
            checks.append(check(f"omega={omega:g} bridge", str(exc), "solution", math.inf, 0.0,
                                False))
            continue
        rec = dict(omega=b.omega, ok=True, t_of_omega=b.t_of_omega,
                   lambda_of_omega=b.lambda_of_omega, tau=b.tau, alpha=b.alpha,
                   matching_residual=b.matching_residual, omega_roundtrip=b.omega_roundtrip,
                   residual_original=b.residual_original,
                   residual_original_rel=b.residual_original_rel, nehari_original=b.nehari_original,
                   evaluations=b.evaluations)
        records.append(rec)
        lab = f"omega={omega:g}: "
        checks += [
            check(lab + "matching residual", b.matching_residual, 0.0, b.matching_residual, 1e-10),
            check(lab + "omega round trip", b.omega_roundtrip, 0.0, b.omega_roundtrip, 1e-8),
            check(lab + "PDE residual", b.residual_original_rel, 0.0, b.residual_original_rel, 1e-4),
            check(lab + "Nehari", b.nehari_original, 0.0, abs(b.nehari_original), 1e-5),
        ]
    return make_report("bridge", config, records, checks)


# ---------------------------------------------------------------------------
# resolvent probes


def random_bumps(grid, n, seed):
    """Smooth radial bumps a exp(-((r^2 - c^2)/w)^2) with seeded random (a, c, w)."""
    rng = np.random.default_rng(seed)
    r = grid.nodes
    out = []
    for _ in range(n):
        a, c, w = rng.uniform(0.5, 2.0), rng.uniform(0.0, 3.0), rng.uniform(0.5, 2.0)
        out.append(RadialFunction(grid, a * np.exp(-(((r * r - c * c) / w) ** 2))))
    return out


def resolvent_slopes(params, grid, shifts=PROBE_SHIFTS, q=None):
    """Log-log slopes of the amplification for a generic bump and for f = W."""
    q = q or cf.default_q(params)
    bump = RadialFunction(grid, np.exp(-grid.nodes**2))
    W = rs.background(grid).W
    ls = np.log(shifts)
    amp_bump = [rs.amplification(s, bump, q) for s in shifts]
    amp_W = [rs.amplification(s, W, q) for s in shifts]
    law = [cf.delta(params, s) / s for s in shifts]
    return dict(q=q, amp_bump=amp_bump, amp_W=amp_W,
                slope_bump=float(np.polyfit(ls, np.log(amp_bump), 1)[0]),
                slope_W=float(np.polyfit(ls, np.log(amp_W), 1)[0]),
                slope_law=float(np.polyfit(ls, np.log(law), 1)[0]))


def block_agreement(grid, s, seed, n=10, q=None):
    q = q or 2.0 * grid.d / (grid.d - 2)
    worst = 0.0
    for f in random_bumps(grid, n, seed):
        gd = rs.perturbed_inverse_direct(s, f)
        gb = rs.perturbed_inverse_block(s, f)
        diff = lq_norm(gd.like(gd.values - gb.values), q) / lq_norm(gd, q)
        worst = max(worst, diff)
    return worst


def cmd_probe_resolvent(config):
    params = config.params
    grid = build_grid(params.d, config.r_max or default_r_max(min(PROBE_SHIFTS)), config.n_inner,
                      config.n_outer or 2048)
    q = config.q or cf.default_q(params)
    sl = resolvent_slopes(params, grid, q=q)
    agree = block_agreement(grid, 1e-3, config.seed, q=q)
    records = [dict(s=s, amplification_bump=a, amplification_W=b, delta_over_s=cf.delta(params, s) / s)
               for s, a, b in zip(PROBE_SHIFTS, sl["amp_bump"], sl["amp_W"])]
    target = -0.5 if params.d == 3 else sl["slope_law"]
    checks = [
        check("generic-data slope", sl["slope_bump"], target, abs(sl["slope_bump"] - target), 0.05),
        check("f = W slope", sl["slope_W"], 0.0, abs(sl["slope_W"]), 0.05),
        check("block vs direct (10 bumps, s=1e-3)", agree, 0.0, agree, 1e-6),
    ]
    fits = dict(q=q, slope_bump=sl["slope_bump"], slope_W=sl["slope_W"], slope_law=sl["slope_law"])
    return make_report("probe-resolvent", config, records, checks, fits)


COMMANDS = {"verify": cmd_verify, "solve": cmd_solve, "sweep": cmd_sweep, "bridge": cmd_bridge,
            "probe-resolvent": cmd_probe_resolvent}


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def build_parser():
    ap = argparse.ArgumentParser(prog="cgs", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--d", type=int)
    ap.add_argument("--p", type=float)
    ap.add_argument("--t", type=_floats, help="coupling(s), comma separated")
    ap.add_argument("--omega", type=_floats, help="frequency(ies), comma separated")
    ap.add_argument("--q", type=float)
    ap.add_argument("--grid-inner", dest="n_inner", type=int)
    ap.add_argument("--grid-outer", dest="n_outer", type=int)
    ap.add_argument("--rmax", dest="r_max", type=float)
    ap.add_argument("--tol", dest="tol_fp", type=float, help="fixed-point tolerance")
    ap.add_argument("--out")
    ap.add_argument("--format", choices=("json", "csv"))
    ap.add_argument("--parallel", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None, stream=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose") and v is not None}
    try:
        file_values = {}
        if args.config:
            with open(args.config) as fh:
                file_values = parse_config_text(fh.read())
        config = build_config(file_values, overrides)
        report = COMMANDS[args.command](config)
    except (ConfigError, DomainError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    emit(report, config, stream)
    for c in report["checks"]:
        if not c["passed"]:
            print(f"FAILED: {c['name']} (rel_error={c['rel_error']}, tol={c['tol']})",
                  file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
