"""Solvers for the finite-horizon, discounted, stationary and ergodic MFG systems.

The time-dependent systems couple a backward HJB equation for the value
``u`` with a forward Kolmogorov equation for the population ``mu``. They are
solved by damped Picard iteration on the ``mu``-flow with RK4 sweeps on a
uniform grid. Coupled quantities are needed at step midpoints; they come
from 4-point cubic interpolation of the node values so the scheme stays
fourth order.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .core import as_simplex_point
from .fitting import loglinear_fit
from .markov import decay_diagnostic, stationary_distribution
from .model import (
    ModelSpec,
    clamp_count,
    hamiltonian_all,
    mean_field_cost_all,
    policy_cost,
    rate_matrix,
)

LGR = logging.getLogger(__name__)

R_PROBE = 0.5


class ConvergenceError(RuntimeError):
    """A fixed-point or continuation loop did not reach its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


def midpoints(a: np.ndarray) -> np.ndarray:
    """Values at ``t_k + dt/2`` from node values by cubic Lagrange interpolation."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0] - 1
    if n < 3:
        return 0.5 * (a[:-1] + a[1:])
    mid = np.empty((n,) + a.shape[1:])
    mid[1:-1] = (-a[:-3] + 9 * a[1:-2] + 9 * a[2:-1] - a[3:]) / 16
    mid[0] = (5 * a[0] + 15 * a[1] - 5 * a[2] + a[3]) / 16
    mid[-1] = (a[-4] - 5 * a[-3] + 15 * a[-2] + 5 * a[-1]) / 16
    return mid


def default_dt(spec: ModelSpec) -> float:
    """Largest step with ``dt * (d-1) a_u <= 0.1``."""
    return 0.1 / spec.max_exit_rate


def _params(spec: ModelSpec):
    return spec.c, spec.kappa, spec.a_l, spec.a_u


@dataclass
class FlowPair:
    t: np.ndarray
    u: np.ndarray
    mu: np.ndarray
    r: float
    iterations: int = 0
    picard_change: float = 0.0
    clamp_activations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def value_at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.t, self.u[:, j]) for j in range(self.u.shape[1])])

    def measure_at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.t, self.mu[:, j]) for j in range(self.mu.shape[1])])

    def rates(self, spec: ModelSpec) -> np.ndarray:
        """Equilibrium generator ``gamma*(x, Delta_x u(t))`` at every node."""
        return K.rates_along(self.u, *_params(spec))

    def residuals(self, spec: ModelSpec) -> tuple[float, float]:
        """Sup-norm defects of the discrete HJB and Kolmogorov sweeps.

        Re-running one backward sweep with the final ``mu`` and one forward
        sweep with the final ``u`` must reproduce the stored flows.
        """
        u_again = K.backward_hjb(self.u[-1], self.mu, midpoints(self.mu), self.dt,
                                 self.r, *_params(spec), spec.beta, spec.g_array)
        mu_again = K.forward_kfe(self.mu[0], self.u, midpoints(self.u), self.dt, *_params(spec))
        return float(np.abs(u_again - self.u).max()), float(np.abs(mu_again - self.mu).max())

    def to_rows(self):
        for k, t in enumerate(self.t):
            yield [t, *self.u[k], *self.mu[k]]

    def to_csv(self, path) -> None:
        d = self.u.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"u_{i+1}" for i in range(d)] + [f"mu_{i+1}" for i in range(d)])
            for row in self.to_rows():
                w.writerow([f"{v:.17g}" for v in row])

    def summary(self) -> dict:
        return {
            "r": self.r,
            "horizon": self.horizon,
            "dt": self.dt,
            "iterations": self.iterations,
            "picard_change": self.picard_change,
            "clamp_activations": self.clamp_activations,
            **{k: v for k, v in self.info.items() if np.isscalar(v)},
        }


@dataclass
class StationarySolution:
    r: float
    value: np.ndarray
    measure: np.ndarray
    rho: float | None = None
    residual: float = 0.0
    iterations: int = 0
    history: list = field(default_factory=list)
    flagged: bool = False

    def to_csv(self, path) -> None:
        d = self.value.size
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"u_{i+1}" for i in range(d)] + [f"mu_{i+1}" for i in range(d)])
            w.writerow([f"{v:.17g}" for v in [0.0, *self.value, *self.measure]])

    def summary(self) -> dict:
        out = {
            "r": self.r,
            "value": self.value.tolist(),
            "measure": self.measure.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "flagged": self.flagged,
        }
        if self.rho is not None:
            out["rho"] = self.rho
        return out


# -- finite and infinite horizon -------------------------------------------


def _picard(spec, r, mu0, n_steps, dt, u_T, tol, max_iter, omega, mu_guess=None):
    params = _params(spec)
    g = spec.g_array
    if mu_guess is None:
        const_u = np.repeat(u_T[None], n_steps + 1, axis=0)
        mu = K.forward_kfe(mu0, const_u, const_u[:-1], dt, *params)
    else:
        mu = mu_guess
    history = []
    change = np.inf
    for it in range(1, max_iter + 1):
        u = K.backward_hjb(u_T, mu, midpoints(mu), dt, r, *params, spec.beta, g)
        mu_new = K.forward_kfe(mu0, u, midpoints(u), dt, *params)
        change = float(np.abs(mu_new - mu).max())
        history.append(change)
        if change <= tol:
            mu = mu_new
            u = K.backward_hjb(u_T, mu, midpoints(mu), dt, r, *params, spec.beta, g)
            return u, mu, it, change, history
        if len(history) > 1 and change > history[-2]:
            omega = max(0.5 * omega, 1e-3)
        mu = (1 - omega) * mu + omega * mu_new
    raise ConvergenceError(
        f"Picard iteration stalled at change {change:.3g} after {max_iter} sweeps",
        history,
    )


def solve_finite_horizon(
    spec: ModelSpec,
    r: float,
    mu0,
    T: float,
    dt: float | None = None,
    *,
    terminal=None,
    tol: float = 1e-12,
    max_iter: int = 2000,
    omega: float = 0.5,
    mu_guess=None,
) -> FlowPair:
    """Solve the horizon-``T`` system with ``u(T) = terminal`` (default zero)."""
    if r < 0:
        raise ValueError("discount must be nonnegative")
    if T <= 0:
        raise ValueError("horizon must be positive")
    mu0 = as_simplex_point(mu0)
    if mu0.size != spec.d:
        raise ValueError(f"mu0 has {mu0.size} entries, model has d={spec.d}")
    dt = default_dt(spec) if dt is None else dt
    n_steps = max(int(round(T / dt)), 1)
    dt = T / n_steps
    u_T = np.zeros(spec.d) if terminal is None else np.asarray(terminal, dtype=float)
    u, mu, it, change, hist = _picard(spec, r, mu0, n_steps, dt, u_T, tol, max_iter, omega, mu_guess)
    t = np.linspace(0.0, T, n_steps + 1)
    clamps = int(sum(clamp_count(spec, uk) for uk in u[:: max(1, n_steps // 50)]))
    return FlowPair(t, u, mu, float(r), it, change, clamps, {"picard_history": hist})


@lru_cache(maxsize=256)
def _stationary_cached(spec: ModelSpec, r: float, tol: float) -> StationarySolution:
    return solve_stationary_discounted(spec, r, tol)


def turnpike_fit(flow: FlowPair, target, floor: float = 1e-11, t_min: float = 1.0,
                 t_max: float | None = None):
    """Log-linear fit of ``|mu(t) - target|`` on ``[t_min, t_max]`` (default ``T - 1``)."""
    t_max = flow.horizon - 1.0 if t_max is None else t_max
    sel = (flow.t >= t_min) & (flow.t <= t_max)
    err = np.linalg.norm(flow.mu[sel] - np.asarray(target)[None], axis=1)
    return loglinear_fit(flow.t[sel], err, floor=floor)


def solve_discounted(
    spec: ModelSpec,
    r: float,
    mu0,
    tol: float = 1e-10,
    *,
    dt: float | None = None,
    horizon: float | None = None,
    max_horizon: float = 400.0,
    r_probe: float = R_PROBE,
    terminal: str = "stationary",
) -> FlowPair:
    """Infinite-horizon discounted system by horizon continuation.

    Finite-horizon problems on ``T, 2T, ...`` are solved until the flows
    agree on ``[0, T/2]`` to within ``tol``. The terminal value defaults to
    the stationary discounted value, so truncation error decays at the
    turnpike rate rather than at rate ``r``; ``terminal="zero"`` uses
    ``u(T) = 0`` instead. With ``horizon`` given, one solve on that horizon
    is returned (used where a fixed discretization is required).
    """
    if not 0 < r <= r_probe:
        raise ValueError(f"discount {r} outside (0, r_probe={r_probe}]")
    mu0 = as_simplex_point(mu0)
    stat = _stationary_cached(spec, float(r), 1e-13)
    u_T = stat.value if terminal == "stationary" else np.zeros(spec.d)
    picard_tol = min(tol * 1e-2, 1e-12)

    if horizon is not None:
        flow = solve_finite_horizon(spec, r, mu0, horizon, dt, terminal=u_T, tol=picard_tol)
        flow.info["stationary_measure"] = stat.measure
        flow.info["stationary_value"] = stat.value
        return flow

    gap, _ = decay_diagnostic(rate_matrix(spec, stat.value))
    T = max(4.0, np.ceil(np.log(1.0 / tol) / gap))
    prev = solve_finite_horizon(spec, r, mu0, T, dt, terminal=u_T, tol=picard_tol)
    diffs = []
    while True:
        T2 = 2 * T
        if T2 > max_horizon:
            raise ConvergenceError(f"horizon cap {max_horizon} exceeded", diffs)
        cur = solve_finite_horizon(spec, r, mu0, T2, dt, terminal=u_T, tol=picard_tol)
        n_cmp = (len(prev.t) - 1) // 2 + 1
        diff = max(
            np.abs(cur.u[:n_cmp] - prev.u[:n_cmp]).max(),
            np.abs(cur.mu[:n_cmp] - prev.mu[:n_cmp]).max(),
        )
        diffs.append(float(diff))
        if diff <= tol:
            break
        prev, T = cur, T2
    cur.info.update(
        horizon_diffs=diffs,
        stationary_measure=stat.measure,
        stationary_value=stat.value,
        seed_gap=gap,
    )
    try:
        fit = turnpike_fit(cur, stat.measure)
        cur.info.update(decay_rate=fit.rate, decay_r2=fit.r2)
    except ValueError:
        cur.info.update(decay_rate=np.inf, decay_r2=np.nan)
    return cur


# -- stationary discounted -------------------------------------------------


def bellman_operator(spec: ModelSpec, r: float, mu, u) -> np.ndarray:
    """One application of the discounted Bellman map for a frozen population.

    ``S(u)(x) = inf_a (sum a_y + r)^{-1} (sum a_y u_y + f(x, a) + F(x, mu))``.
    The ratio is minimized exactly: for fixed ``lam`` the numerator minus
    ``lam`` times the denominator separates over the rates, and the optimal
    value is the root of that function in ``lam``.
    """
    u = np.asarray(u, dtype=float)
    F = mean_field_cost_all(spec, mu)
    out = np.empty(spec.d)
    for x in range(spec.d):
        others = np.arange(spec.d) != x
        uo = u[others]

        def gap(lam):
            a = np.clip(spec.kappa - (uo - lam) / spec.c, spec.a_l, spec.a_u)
            return np.sum(a * (uo - lam) + 0.5 * spec.c * (a - spec.kappa) ** 2) + F[x] - lam * r

        lo, hi = -1.0, 1.0
        scale = 1.0 + np.abs(u).max() + spec.cost_bound / r
        lo, hi = -scale, scale
        while gap(lo) < 0:
            lo *= 2
        while gap(hi) > 0:
            hi *= 2
        out[x] = brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return out


def solve_frozen_hjb(spec: ModelSpec, r: float, mu, u0=None, tol: float = 1e-14,
                     max_iter: int = 100) -> np.ndarray:
    """Fixed point of the Bellman map for a frozen population (policy iteration).

    Solves ``r u = H(x, Delta_x u) + F(x, mu)``. Each step evaluates the
    current policy with one linear solve and then switches to its optimal
    rates, which is Newton's method on the same fixed-point equation.
    """
    F = mean_field_cost_all(spec, mu)
    u = np.zeros(spec.d) if u0 is None else np.asarray(u0, dtype=float)
    eye = np.eye(spec.d)
    prev = np.inf
    for _ in range(max_iter):
        Q = rate_matrix(spec, u)
        u_new = np.linalg.solve(r * eye - Q, policy_cost(spec, Q) + F)
        change = np.abs(u_new - u).max()
        scale = max(1.0, np.abs(u_new).max())
        # quadratic convergence ends in round-off noise; stop once it stagnates there
        if change <= tol * scale or (change >= prev and change <= 1e-9 * scale):
            return u_new
        u, prev = u_new, change
    raise ConvergenceError("policy iteration did not settle")


def stationary_residual(spec: ModelSpec, r: float, u, mu, rho: float | None = None) -> float:
    """Sup-norm residual of the stationary system (ergodic when ``rho`` is given)."""
    lhs = r * np.asarray(u) if rho is None else np.full(spec.d, rho)
    hjb = hamiltonian_all(spec, u) + mean_field_cost_all(spec, mu) - lhs
    kfe = np.asarray(mu) @ rate_matrix(spec, u)
    return float(max(np.abs(hjb).max(), np.abs(kfe).max()))


def solve_stationary_discounted(spec: ModelSpec, r: float, tol: float = 1e-12,
                                omega: float = 0.5, max_iter: int = 5000) -> StationarySolution:
    """Damped fixed point ``mu -> stationary law of the optimal rates for mu``."""
    if r <= 0:
        raise ValueError("stationary discounted system needs r > 0")
    mu = np.full(spec.d, 1.0 / spec.d)
    u = None
    history = []
    for it in range(1, max_iter + 1):
        u = solve_frozen_hjb(spec, r, mu, u)
        mu_new = stationary_distribution(rate_matrix(spec, u))
        change = float(np.abs(mu_new - mu).max())
        history.append(change)
        stalled = len(history) > 5 and change >= min(history[-6:-1]) and change <= 1e-10
        if change <= tol or stalled:
            mu = mu_new
            u = solve_frozen_hjb(spec, r, mu, u)
            res = stationary_residual(spec, r, u, mu)
            if res > 10 * tol * max(1.0, float(np.abs(u).max())):
                LGR.warning("stationary residual %.3g above 10 tol", res)
            return StationarySolution(float(r), u, mu, None, res, it, history)
        if len(history) > 1 and change > history[-2]:
            omega = max(0.5 * omega, 1e-3)
        mu = (1 - omega) * mu + omega * mu_new
    raise ConvergenceError("stationary fixed point did not converge", history)


# -- ergodic ----------------------------------------------------------------


def _ergodic_system(spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    d = spec.d
    rho, u, mu = z[0], z[1 : d + 1], z[d + 1 :]
    hjb = -rho + hamiltonian_all(spec, u) + mean_field_cost_all(spec, mu)
    kfe = (mu @ rate_matrix(spec, u))[:-1]
    return np.concatenate([hjb, kfe, [mu.sum() - 1.0, u.sum()]])


def _newton(fun, z0, tol, max_iter=50, h=1e-7):
    z = np.array(z0, dtype=float)
    for it in range(max_iter):
        F = fun(z)
        if np.abs(F).max() <= tol:
            return z, it, float(np.abs(F).max())
        J = np.empty((F.size, z.size))
        for j in range(z.size):
            e = np.zeros_like(z)
            e[j] = h
            J[:, j] = (fun(z + e) - fun(z - e)) / (2 * h)
        z = z - np.linalg.solve(J, F)
    F = fun(z)
    return z, max_iter, float(np.abs(F).max())


def vanishing_discount_ladder(spec: ModelSpec, r0: float = 0.1, max_n: int = 14,
                              tol: float = 1e-10):
    """Triples ``(r u^r_1, u^r - <u^r>, mu^r)`` for ``r_n = r0 2^-n`` until they settle."""
    rungs = []
    for n in range(max_n + 1):
        r = r0 * 2.0**-n
        s = _stationary_cached(spec, r, 1e-13)
        triple = np.concatenate([[r * s.value[0]], s.value - s.value.mean(), s.measure])
        rungs.append((r, triple))
        if n > 0 and np.abs(triple - rungs[-2][1]).max() <= tol:
            break
    return rungs


def solve_ergodic(spec: ModelSpec, tol: float = 1e-10, r0: float = 0.1,
                  max_n: int = 14) -> StationarySolution:
    """Ergodic system via the vanishing-discount ladder plus a Newton polish.

    Returns ``rho``, the potential ``u`` normalized to zero sum and the
    stationary law ``mu``. If Newton fails the extrapolated ladder value is
    returned with ``flagged=True``.
    """
    rungs = vanishing_discount_ladder(spec, r0, max_n, tol)
    history = [float(np.abs(b[1] - a[1]).max()) for a, b in zip(rungs, rungs[1:])]
    if len(rungs) >= 2:
        # first-order Richardson step toward r = 0 on the halving ladder
        start = 2 * rungs[-1][1] - rungs[-2][1]
    else:
        start = rungs[-1][1]
    d = spec.d
    start[d + 1 :] = np.clip(start[d + 1 :], 1e-12, None)
    start[d + 1 :] /= start[d + 1 :].sum()
    z, it, res = _newton(lambda z: _ergodic_system(spec, z), start, tol)
    flagged = res > tol or not np.all(z[d + 1 :] > 0)
    if flagged:
        LGR.warning("ergodic Newton polish failed (residual %.3g); using ladder value", res)
        z = start
        res = float(np.abs(_ergodic_system(spec, z)).max())
    rho, u, mu = float(z[0]), z[1 : d + 1], z[d + 1 :]
    return StationarySolution(0.0, u, mu, rho, res, len(rungs) + it, history, flagged)


def write_report(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


def duality_margin(spec: ModelSpec, a: FlowPair, b: FlowPair, constant: float | None = None) -> float:
    """Right minus left side of the value-measure duality for two solved flows.

    Left: ``C int e^{-rt} sum_x |Delta_x (u - u~)|^2 (mu_x + mu~_x) dt``;
    right: ``-[e^{-rt} (mu - mu~) . (u - u~)]`` between the end points.
    ``C`` defaults to half the concavity constant, which is what the
    second-order remainder of a concave Hamiltonian delivers. Trapezoid rule
    on the common grid.
    """
    if a.t.shape != b.t.shape or np.abs(a.t - b.t).max() > 1e-12 or a.r != b.r:
        raise ValueError("flows must share grid and discount")
    C = 0.5 * spec.concavity if constant is None else constant
    du = a.u - b.u
    dmu = a.mu - b.mu
    w = np.exp(-a.r * a.t)
    diffs = (du[:, None, :] - du[:, :, None]) ** 2  # [k, x, y] = (du_y - du_x)^2
    integrand = w * np.einsum("kxy,kx->k", diffs, a.mu + b.mu)
    lhs = C * np.trapezoid(integrand, a.t)
    pair = w * np.einsum("kd,kd->k", dmu, du)
    return float(-(pair[-1] - pair[0]) - lhs)
