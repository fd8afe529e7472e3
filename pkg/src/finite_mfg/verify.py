"""Numerical certification suite.

Every check returns a :class:`Check` holding the measured quantities, the
thresholds they are held to and a signed margin (nonnegative iff the check
passes). Thresholds default to the documented tolerances; ``check_tol``
tightens every absolute tolerance to at most that value.

Deterministic checks use fixed internal seeds. The Monte Carlo check
draws from ``seed``, so changing it moves only that check's margins.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import delta_norm, e_dir, lattice
from .fitting import exponential_envelope, loglinear_fit, loglog_slope
from .linearized import duality_gap, solve_linearized
from .markov import PolicyFlow, estimate_cost, simulate_paths
from .master import (
    cached_field,
    evaluate_Ur,
    grad_Ur,
    master_horizon,
    monotonicity_check,
    solve_ergodic_master,
)
from .mfg_solver import (
    _stationary_cached,
    duality_margin,
    solve_discounted,
    solve_ergodic,
    solve_finite_horizon,
    turnpike_fit,
)
from .model import ModelSpec, rate_matrix

NOISE_FLOOR = 1e-11
DET_SEED = 20240611


@dataclass
class Check:
    name: str
    passed: bool
    margin: float
    items: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def line(self) -> str:
        return f"[{self.verdict.upper()}] {self.name}: margin {self.margin:.3e} ({self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict,
            "margin": self.margin,
            "items": self.items,
            "details": self.details,
            "seconds": self.seconds,
        }


class _Judge:
    """Collects (label, measured, threshold, sense) and turns them into a verdict."""

    def __init__(self, check_tol=None):
        self.check_tol = check_tol
        self.items = []

    def tol(self, value: float) -> float:
        return value if self.check_tol is None else min(value, self.check_tol)

    def le(self, label, measured, threshold, absolute=True):
        threshold = self.tol(threshold) if absolute else threshold
        self.items.append({"label": label, "measured": float(measured), "threshold": float(threshold),
                           "sense": "<=", "margin": float(threshold - measured)})

    def ge(self, label, measured, threshold):
        self.items.append({"label": label, "measured": float(measured), "threshold": float(threshold),
                           "sense": ">=", "margin": float(measured - threshold)})

    def check(self, name, details=None) -> Check:
        margins = [it["margin"] for it in self.items]
        ok = all(np.isfinite(m) and m >= 0 for m in margins)
        worst = float(min(margins)) if margins else 0.0
        return Check(name, ok, worst, self.items, details or {})


def default_n(spec: ModelSpec) -> int:
    """Lattice resolution: 20 for two states, 10 otherwise."""
    return 20 if spec.d == 2 else 10


def default_mu0(d: int) -> np.ndarray:
    mu0 = np.full(d, 0.1 / (d - 1))
    mu0[0] = 0.9
    return mu0


@lru_cache(maxsize=32)
def _flow(spec: ModelSpec, r: float, mu0: tuple, horizon: float | None = None):
    if horizon is None:
        return solve_discounted(spec, r, np.array(mu0), 1e-10)
    return solve_discounted(spec, r, np.array(mu0), horizon=horizon)


@lru_cache(maxsize=32)
def _pairs(spec: ModelSpec, r: float, n_pairs: int = 5):
    rng = np.random.default_rng(DET_SEED)
    T = master_horizon(spec, r)
    out = []
    for _ in range(n_pairs):
        a, b = rng.dirichlet(np.ones(spec.d), size=2)
        out.append((a, b, _flow(spec, r, tuple(a), T), _flow(spec, r, tuple(b), T)))
    return out


# -- individual checks ---------------------------------------------------------


def check_symmetric_closed_form(spec: ModelSpec, rs=(0.1, 0.01), check_tol=None) -> Check:
    """Closed form when every state is alike: uniform law, flat value, rho = beta/d + g."""
    j = _Judge(check_tol)
    if np.ptp(spec.g_array) > 0:
        return Check("symmetric_closed_form", True, 0.0, [], {"skipped": "model is not symmetric"})
    rho = spec.beta / spec.d + spec.g[0]
    erg = solve_ergodic(spec)
    j.le("|rho - closed form|", abs(erg.rho - rho), 1e-6)
    j.le("|mu - uniform|", np.abs(erg.measure - 1 / spec.d).max(), 1e-8)
    j.le("|u|", np.abs(erg.value).max(), 1e-8)
    for r in rs:
        s = _stationary_cached(spec, r, 1e-13)
        j.le(f"|r u^r - rho| at r={r}", np.abs(r * s.value - rho).max(), 1e-8)
    return j.check("symmetric_closed_form", {"rho": erg.rho})


def vanishing_discount_errors(spec: ModelSpec, rs=(1e-1, 1e-2, 1e-3, 1e-4)):
    erg = solve_ergodic(spec)
    errs = []
    for r in rs:
        s = _stationary_cached(spec, r, 1e-13)
        err = (abs(r * s.value[0] - erg.rho) + delta_norm(s.value - erg.value)
               + np.linalg.norm(s.measure - erg.measure))
        errs.append(err)
    return np.array(errs)


def check_vanishing_discount(spec: ModelSpec, rs=(1e-1, 1e-2, 1e-3, 1e-4), check_tol=None) -> Check:
    j = _Judge(check_tol)
    errs = vanishing_discount_errors(spec, rs)
    ratios = errs / np.sqrt(rs)
    exact = errs.max() <= 1e-12
    j.ge("min decrease of error along the ladder", 0.0 if exact else np.min(-np.diff(errs)), 0.0)
    j.ge("first minus last error/sqrt(r)", 0.0 if exact else ratios[0] - ratios[-1], 0.0)
    return j.check("vanishing_discount_rate", {"r": list(rs), "error": errs.tolist(),
                                                "error_over_sqrt_r": ratios.tolist()})


def turnpike_rates(spec: ModelSpec, rs=(0.1, 0.05)):
    out = []
    for r in rs:
        flow = _flow(spec, r, tuple(default_mu0(spec.d)))
        fit = turnpike_fit(flow, flow.info["stationary_measure"], floor=NOISE_FLOOR)
        out.append(fit)
    return out


def check_turnpike(spec: ModelSpec, rs=(0.1, 0.05), check_tol=None) -> Check:
    j = _Judge(check_tol)
    fits = turnpike_rates(spec, rs)
    for r, fit in zip(rs, fits):
        j.ge(f"R^2 at r={r}", fit.r2, 0.99)
        j.ge(f"decay rate at r={r}", fit.rate, 0.0)
    g = [f.rate for f in fits]
    j.le("relative spread of fitted rates", (max(g) - min(g)) / max(g), 0.2, absolute=False)
    return j.check("turnpike_decay", {"rates": g, "r2": [f.r2 for f in fits]})


def stability_constants(spec: ModelSpec, rs=(0.1, 0.05, 0.01)):
    consts = []
    for r in rs:
        gamma = turnpike_rates(spec, (r,))[0].rate
        worst = 0.0
        for a, b, fa, fb in _pairs(spec, r):
            keep = fa.t <= fa.horizon / 2
            diff = np.linalg.norm(fa.mu - fb.mu, axis=1) + np.linalg.norm(fa.u - fb.u, axis=1)
            keep &= diff > NOISE_FLOOR
            val = np.max(np.exp(gamma * fa.t[keep] / 2) * diff[keep]) / np.linalg.norm(a - b)
            worst = max(worst, float(val))
        consts.append(worst)
    return np.array(consts)


def check_stability(spec: ModelSpec, rs=(0.1, 0.05, 0.01), spread: float = 1.5, check_tol=None) -> Check:
    j = _Judge(check_tol)
    C = stability_constants(spec, rs)
    j.le("max/min of fitted constants across r", C.max() / C.min(), spread, absolute=False)
    return j.check("initial_data_stability", {"r": list(rs), "constants": C.tolist()})


def check_duality(spec: ModelSpec, rs=(0.1, 0.05, 0.01), check_tol=None) -> Check:
    """Duality margin on every solved pair: discounted pairs plus finite-horizon pairs."""
    j = _Judge(check_tol)
    margins, full = [], []
    for r in rs:
        for _, _, fa, fb in _pairs(spec, r):
            margins.append(duality_margin(spec, fa, fb))
            full.append(duality_margin(spec, fa, fb, constant=spec.concavity))
    rng = np.random.default_rng(DET_SEED + 1)
    for _ in range(3):
        a, b = rng.dirichlet(np.ones(spec.d), size=2)
        fa = solve_finite_horizon(spec, 0.1, a, 5.0)
        fb = solve_finite_horizon(spec, 0.1, b, 5.0)
        margins.append(duality_margin(spec, fa, fb))
        full.append(duality_margin(spec, fa, fb, constant=spec.concavity))
    j.ge("worst duality margin", min(margins), -j.tol(1e-8))
    return j.check("value_measure_duality", {"margins": margins,
                                              "margins_with_full_concavity": full})


def _envelope_check(t, size, rate, shape=None, frac=0.5, upto=0.8):
    keep = size > NOISE_FLOOR * max(1.0, size[0])
    T = t[keep][-1]
    env = exponential_envelope(t[keep], size[keep], rate,
                               None if shape is None else shape[keep],
                               fit_until=frac * T, check_until=upto * T)
    return env


def linearized_decay(spec: ModelSpec, rs=(0.1, 0.05, 0.01), trials: int = 20):
    rng = np.random.default_rng(DET_SEED + 2)
    m0s = rng.normal(size=(trials, spec.d))
    m0s -= m0s.mean(axis=1, keepdims=True)
    rows = []
    for r in rs:
        st = _stationary_cached(spec, r, 1e-13)
        min_mv, min_gap, worst_ratio, rates, scales = np.inf, np.inf, 0.0, [], []
        for m0 in m0s:
            lin = solve_linearized(spec, st, m0)
            min_mv = min(min_mv, lin.pairing().min())
            min_gap = min(min_gap, duality_gap(lin, 0.0, lin.t[-1]))
            size = lin.size() / np.linalg.norm(m0)
            fit = loglinear_fit(lin.t, size, floor=NOISE_FLOOR)
            env = _envelope_check(lin.t, size, fit.rate)
            rates.append(fit.rate)
            scales.append(env.scale)
            worst_ratio = max(worst_ratio, env.worst_ratio_outside)
        rows.append({"r": r, "min_mv": float(min_mv), "min_gap": float(min_gap),
                     "rate": float(np.median(rates)), "scale": float(np.max(scales)),
                     "worst_ratio_outside": float(worst_ratio), "min_rate": float(np.min(rates))})
    return rows


def sourced_envelope(spec: ModelSpec, r: float = 0.1, gamma: float = 1.0, lam: float | None = None):
    st = _stationary_cached(spec, r, 1e-13)
    d = spec.d
    m0 = e_dir(0, d - 1, d) * 0.3
    a_dir = np.linspace(1.0, -1.0, d)
    b_dir = e_dir(0, 1, d)
    A = lambda t: 0.2 * np.exp(-gamma * t) * a_dir
    B = lambda t: 0.1 * np.exp(-gamma * t) * b_dir
    lin = solve_linearized(spec, st, m0, A=A, B=B)
    C1 = np.linalg.norm(A(0.0)) + np.linalg.norm(B(0.0))
    if lam is None:
        lam = linearized_decay(spec, (r,), trials=3)[0]["rate"]
    rate = min(lam, gamma)
    shape = C1 * (1 + np.linalg.norm(m0) + lin.t)
    env = _envelope_check(lin.t, lin.size(), rate, shape)
    return env, lin


def check_linearized(spec: ModelSpec, rs=(0.1, 0.05, 0.01), check_tol=None) -> Check:
    j = _Judge(check_tol)
    rows = linearized_decay(spec, rs)
    for row in rows:
        j.ge(f"min m.v at r={row['r']}", row["min_mv"], -j.tol(1e-10))
        j.ge(f"min linearized duality gap at r={row['r']}", row["min_gap"], -j.tol(1e-8))
        j.ge(f"min fitted decay rate at r={row['r']}", row["min_rate"], 0.0)
        j.le(f"out-of-sample envelope ratio at r={row['r']}", row["worst_ratio_outside"], 1.05, absolute=False)
    lam = np.array([row["rate"] for row in rows])
    Cs = np.array([row["scale"] for row in rows])
    j.le("relative spread of decay rates", np.ptp(lam) / lam.max(), 0.2, absolute=False)
    j.le("relative spread of envelope constants", np.ptp(Cs) / Cs.max(), 0.2, absolute=False)
    env, _ = sourced_envelope(spec, rs[0], lam=float(lam[0]))
    j.le("sourced envelope out-of-sample ratio", env.worst_ratio_outside, 1.05, absolute=False)
    return j.check("linearized_decay_and_sign", {"rows": rows, "sourced_scale": env.scale})


def simplex_fd(spec: ModelSpec, r: float, eta, h: float = 1e-3) -> np.ndarray:
    """Central differences of ``U_r`` along ``e_z - e_1``; column 0 is zero."""
    D = np.zeros((spec.d, spec.d))
    for z in range(1, spec.d):
        e = e_dir(0, z, spec.d)
        D[:, z] = (evaluate_Ur(spec, r, eta + h * e) - evaluate_Ur(spec, r, eta - h * e)) / (2 * h)
    return D


def second_order_residuals(spec: ModelSpec, r: float, eta, steps=(1e-2, 1e-3, 1e-4)):
    U0 = evaluate_Ur(spec, r, eta)
    D = grad_Ur(spec, r, eta)
    direction = e_dir(0, 1, spec.d)
    if spec.d > 2:
        direction = direction + 0.5 * e_dir(0, 2, spec.d)
    out = []
    for eps in steps:
        step = eps * direction
        U1 = evaluate_Ur(spec, r, eta + step)
        out.append(float(np.abs(U1 - U0 - D @ step).max()))
    return np.array([np.linalg.norm(eps * direction) for eps in steps]), np.array(out)


def check_derivative(spec: ModelSpec, r: float = 0.05, n: int | None = None, points: int = 20,
                     check_tol=None) -> Check:
    j = _Judge(check_tol)
    n = default_n(spec) if n is None else n
    P = lattice(spec.d, n)
    interior = P[np.all(P > 0, axis=1)]
    rng = np.random.default_rng(DET_SEED + 3)
    pick = interior[rng.choice(len(interior), size=min(points, len(interior)), replace=False)]
    worst = 0.0
    for eta in pick:
        worst = max(worst, float(np.abs(grad_Ur(spec, r, eta) - simplex_fd(spec, r, eta)).max()))
    j.le("max |gradient - central FD|", worst, 5e-3)
    dist, res = second_order_residuals(spec, r, pick[0])
    if res.max() <= 1e-14:
        slope = 2.0
    else:
        slope = loglog_slope(dist, res)
    j.le("|second-order slope - 2|", abs(slope - 2.0), 0.2, absolute=False)
    return j.check("derivative_consistency", {"points": len(pick), "max_fd_gap": worst,
                                               "slope": slope, "residuals": res.tolist()})


@lru_cache(maxsize=8)
def _ergodic_field(spec: ModelSpec, n: int, r0: float):
    return solve_ergodic_master(spec, n, r0=r0)


def check_master_residuals(spec: ModelSpec, r: float = 0.05, n: int | None = None, solver_tol: float = 1e-10,
                           fd_tol: float = 5e-3, check_tol=None) -> Check:
    j = _Judge(check_tol)
    n = default_n(spec) if n is None else n
    f = cached_field(spec, r, n)
    res = np.abs(f.residuals())
    j.le(f"max interior residual at r={r}", res[f.interior()].max(), 10 * (solver_tol + fd_tol))
    e = _ergodic_field(spec, n, 0.1)
    j.le("max ergodic residual", np.abs(e.residuals()).max(), 1e-3)
    j.le("|rho - rho_bar|", abs(e.rho - e.info["rho_ergodic"]), 1e-4)
    return j.check("master_residuals", {"rho": e.rho, "rho_bar": e.info["rho_ergodic"],
                                         "rho_ladder": e.info["rho_ladder"]})


def check_monotonicity(spec: ModelSpec, rs=(0.1, 0.01), n: int | None = None, trials: int = 200,
                       check_tol=None) -> Check:
    j = _Judge(check_tol)
    n = default_n(spec) if n is None else n
    for r in rs:
        j.ge(f"worst pairing U_r, r={r}", monotonicity_check(cached_field(spec, r, n), trials, DET_SEED),
             -j.tol(1e-8))
    j.ge("worst pairing U_0", monotonicity_check(_ergodic_field(spec, n, 0.1), trials, DET_SEED),
         -j.tol(1e-8))
    return j.check("lasry_lions_monotonicity")


def check_uniqueness(spec: ModelSpec, n: int | None = None, r0s=(0.1, 0.08), check_tol=None) -> Check:
    j = _Judge(check_tol)
    n = default_n(spec) if n is None else n
    a = _ergodic_field(spec, n, r0s[0])
    b = _ergodic_field(spec, n, r0s[1])
    diff = a.values - b.values
    j.le("spread of U_0 difference", np.ptp(diff), 1e-4)
    u_bar = solve_ergodic(spec).value
    j.le("spread of U_0(., mu) - u_bar", np.ptp(a.info["u0_at_mu"] - u_bar), 1e-5)
    return j.check("uniqueness_up_to_constant", {"shift": float(np.mean(diff))})


def check_mfe_simulation(spec: ModelSpec, r: float = 0.1, n_paths: int = 10_000, t_obs: float = 5.0,
                         erg_paths: int = 2000, erg_T: float = 50.0, seed: int = 0,
                         check_tol=None) -> Check:
    j = _Judge(check_tol)
    mu0 = default_mu0(spec.d)
    T = master_horizon(spec, r)
    flow = _flow(spec, r, tuple(mu0), T)
    policy = PolicyFlow(flow.rates(spec), flow.t)
    paths = simulate_paths(policy, mu0, t_obs, n_paths, seed=seed)
    emp = np.bincount([p.states[-1] for p in paths], minlength=spec.d) / n_paths
    target = flow.measure_at(t_obs)
    se = np.sqrt(target * (1 - target) / n_paths)
    j.le("max |empirical - mu(t)| / SE", np.max(np.abs(emp - target) / se), 3.0, absolute=False)

    erg = solve_ergodic(spec)
    Q = rate_matrix(spec, erg.value)
    paths = simulate_paths(PolicyFlow(Q), erg.measure, erg_T, erg_paths, seed=seed, first_index=n_paths)
    est = estimate_cost(spec, PolicyFlow(Q), erg.measure, 0.0, paths)
    rel = abs(est.mean - erg.rho) / abs(erg.rho) if erg.rho != 0 else abs(est.mean)
    j.le("relative ergodic cost error", rel, 0.02, absolute=False)

    perturbed = []
    rng = np.random.default_rng(DET_SEED + 4)
    off = [(x, y) for x in range(spec.d) for y in range(spec.d) if x != y]
    k = 0
    while len(perturbed) < 5:
        x, y = off[rng.integers(len(off))]
        shift = 0.2 if rng.random() < 0.5 else -0.2
        Qp = Q.copy()
        if not spec.a_l <= Qp[x, y] + shift <= spec.a_u:
            continue
        Qp[x, y] += shift
        Qp[x, x] -= shift
        k += 1
        paths = simulate_paths(PolicyFlow(Qp), erg.measure, erg_T, erg_paths, seed=seed,
                               first_index=n_paths + k * erg_paths)
        e = estimate_cost(spec, PolicyFlow(Qp), erg.measure, 0.0, paths)
        perturbed.append(e)
        j.ge(f"perturbed cost minus rho + 2 SE ({x + 1}->{y + 1}, {shift:+.1f})",
             e.mean - erg.rho + 2 * e.stderr, 0.0)
    return j.check("mfe_simulation", {"empirical": emp.tolist(), "flow": target.tolist(),
                                       "ergodic_estimate": est.mean, "ergodic_stderr": est.stderr,
                                       "rho": erg.rho, "perturbed": [p.mean for p in perturbed]})


def check_boundedness(spec: ModelSpec, rs=(0.1, 0.01), n: int | None = None, check_tol=None) -> Check:
    j = _Judge(check_tol)
    n = default_n(spec) if n is None else n
    C = spec.cost_bound
    for r in rs:
        flows = [_flow(spec, r, tuple(default_mu0(spec.d)))] + [p[2] for p in _pairs(spec, r)]
        sup_u = max(np.abs(f.u).max() for f in flows)
        j.le(f"r sup|u| - C at r={r}", r * sup_u - C, 0.0, absolute=False)
        j.le(f"max |r U_r| - C at r={r}", np.abs(r * cached_field(spec, r, n).values).max() - C, 0.0,
             absolute=False)
    return j.check("boundedness", {"cost_bound": C})


SUITE = {
    "symmetric_closed_form": check_symmetric_closed_form,
    "vanishing_discount_rate": check_vanishing_discount,
    "turnpike_decay": check_turnpike,
    "initial_data_stability": check_stability,
    "value_measure_duality": check_duality,
    "linearized_decay_and_sign": check_linearized,
    "derivative_consistency": check_derivative,
    "master_residuals": check_master_residuals,
    "lasry_lions_monotonicity": check_monotonicity,
    "uniqueness_up_to_constant": check_uniqueness,
    "mfe_simulation": check_mfe_simulation,
    "boundedness": check_boundedness,
}


def run_check(name: str, spec: ModelSpec, **kwargs) -> Check:
    fn = SUITE[name]
    t0 = time.perf_counter()
    chk = fn(spec, **kwargs)
    chk.seconds = time.perf_counter() - t0
    return chk


def run_suite(spec: ModelSpec, names=None, seed: int = 0, check_tol=None) -> list[Check]:
    out = []
    for name in names or SUITE:
        kwargs = {"check_tol": check_tol}
        if name == "mfe_simulation":
            kwargs["seed"] = seed
        out.append(run_check(name, spec, **kwargs))
    return out
