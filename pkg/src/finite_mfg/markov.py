"""Continuous-time Markov chain utilities.

Stationary laws, uniformized jump-path simulation, Monte Carlo cost
estimates and a spectral-gap mixing heuristic.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .core import as_simplex_point
from .model import ModelSpec, policy_cost, mean_field_cost_all


def stationary_distribution(Q) -> np.ndarray:
    """Unique ``pi`` with ``pi Q = 0`` and unit mass.

    The last balance equation is replaced by the normalization row.
    """
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    A = Q.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(d)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("generator is not irreducible") from exc
    return pi


def decay_diagnostic(Q, n_times: int = 200) -> tuple[float, float]:
    """Mixing rate and transient prefactor of ``exp(tQ)``.

    The rate is the spectral gap (minus the largest real part among the
    nonzero eigenvalues). The prefactor is the largest observed value of
    ``|P_t(x, .) - pi| e^{gap t}`` over a time grid. Heuristic only.
    """
    Q = np.asarray(Q, dtype=float)
    eig = np.linalg.eigvals(Q)
    order = np.argsort(np.abs(eig))
    gap = float(-np.max(eig[order[1:]].real))
    pi = stationary_distribution(Q)
    horizon = 10.0 / max(gap, 1e-12)
    prefactor = 0.0
    for t in np.linspace(0.0, horizon, n_times):
        P = expm(t * Q)
        dev = np.linalg.norm(P - pi[None, :], axis=1).max()
        prefactor = max(prefactor, dev * np.exp(gap * t))
    return gap, float(prefactor)


class PolicyFlow:
    """Piecewise-constant generator flow.

    ``rates[k]`` is active on ``[times[k], times[k+1])``; the last matrix
    also covers everything past the final grid time. A single ``(d, d)``
    matrix gives a stationary policy.
    """

    def __init__(self, rates, times=None):
        rates = np.asarray(rates, dtype=float)
        if rates.ndim == 2:
            rates = rates[None]
            times = np.array([0.0])
        if times is None:
            raise ValueError("time-dependent policy needs a time grid")
        self.times = np.asarray(times, dtype=float)
        self.rates = rates
        if self.rates.shape[0] != self.times.shape[0]:
            raise ValueError("need one rate matrix per grid time")
        off = ~np.eye(self.d, dtype=bool)
        if np.any(self.rates[:, off] < 0):
            raise ValueError("negative off-diagonal rate")
        if np.abs(self.rates.sum(axis=2)).max() > 1e-10:
            raise ValueError("generator rows must sum to zero")

    @classmethod
    def stationary(cls, Q) -> "PolicyFlow":
        return cls(Q)

    @property
    def d(self) -> int:
        return self.rates.shape[1]

    @property
    def is_stationary(self) -> bool:
        return self.rates.shape[0] == 1

    def index(self, t):
        return np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, None)

    def at(self, t: float) -> np.ndarray:
        return self.rates[int(self.index(t))]

    @property
    def max_exit_rate(self) -> float:
        return float(-np.min(np.diagonal(self.rates, axis1=1, axis2=2)))


@dataclass(frozen=True)
class JumpPath:
    """Jump times (first entry 0) and the state held from each time on."""

    times: np.ndarray
    states: np.ndarray
    horizon: float

    @property
    def x0(self) -> int:
        return int(self.states[0])

    @property
    def n_jumps(self) -> int:
        return len(self.times) - 1

    def state_at(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.states[idx]


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, path index); order of use is irrelevant."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(index)]))


def _simulate_one(policy: PolicyFlow, x0, T: float, lam: float, rng) -> JumpPath:
    d = policy.d
    if not np.isscalar(x0):
        x0 = int(rng.choice(d, p=x0))
    n_events = rng.poisson(lam * T)
    clock = np.sort(rng.uniform(0.0, T, size=n_events))
    draws = rng.uniform(0.0, lam, size=n_events)
    idx = policy.index(clock)
    times = [0.0]
    states = [x0]
    x = x0
    for t, k, w in zip(clock, idx, draws):
        row = policy.rates[k, x]
        acc = 0.0
        for y in range(d):
            if y == x:
                continue
            acc += row[y]
            if w < acc:
                if t > times[-1]:
                    times.append(float(t))
                    states.append(y)
                else:  # duplicated clock time; keep the later jump
                    states[-1] = y
                x = y
                break
    return JumpPath(np.array(times), np.array(states, dtype=int), float(T))


def simulate_paths(
    policy: PolicyFlow,
    x0,
    T: float,
    n: int,
    seed: int = 0,
    rate_bound: float | None = None,
    first_index: int = 0,
) -> list[JumpPath]:
    """i.i.d. CTMC paths on ``[0, T]`` by uniformization.

    ``x0`` is a state or an initial law, sampled per path from its own stream.

    Candidate jump times come from a Poisson clock of rate ``rate_bound``
    (default: the policy's largest exit rate); at a candidate time in state
    ``x`` the chain moves to ``y`` with probability ``Q(t)[x, y] / rate``.
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    if n < 1:
        raise ValueError("need at least one path")
    if np.isscalar(x0):
        if not 0 <= x0 < policy.d:
            raise IndexError(f"initial state {x0} out of range")
    else:
        x0 = as_simplex_point(x0)
    lam = policy.max_exit_rate if rate_bound is None else float(rate_bound)
    if lam < policy.max_exit_rate - 1e-12:
        raise ValueError("uniformization rate below the largest exit rate")
    return [
        _simulate_one(policy, x0, T, lam, path_rng(seed, first_index + i))
        for i in range(n)
    ]


def empirical_law(paths: list[JumpPath], t: float, d: int) -> np.ndarray:
    states = np.array([p.state_at(t) for p in paths])
    return np.bincount(states, minlength=d) / len(paths)


def forward_marginals(policy: PolicyFlow, mu0, times) -> np.ndarray:
    """Exact marginal laws of the chain at ``times`` (piecewise ``expm``)."""
    mu = np.asarray(mu0, dtype=float)
    out = []
    t_cur = 0.0
    breaks = policy.times
    for t in np.asarray(times, dtype=float):
        while t_cur < t:
            k = int(policy.index(t_cur))
            nxt = breaks[k + 1] if k + 1 < len(breaks) else np.inf
            step = min(t, nxt) - t_cur
            mu = mu @ expm(step * policy.rates[k])
            t_cur += step
        out.append(mu.copy())
    return np.array(out)


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    stderr: float
    n_paths: int


def _path_cost(path: JumpPath, grid, rate_by_interval, r: float) -> float:
    T = path.horizon
    cuts = np.unique(np.concatenate([grid[(grid > 0) & (grid < T)], path.times, [T]]))
    left, right = cuts[:-1], cuts[1:]
    states = path.state_at(left)
    k = np.clip(np.searchsorted(grid, left, side="right") - 1, 0, len(rate_by_interval) - 1)
    rate = rate_by_interval[k, states]
    if r > 0:
        weight = (np.exp(-r * left) - np.exp(-r * right)) / r
        return float(np.sum(rate * weight))
    return float(np.sum(rate * (right - left)) / T)


def estimate_cost(
    spec: ModelSpec,
    policy: PolicyFlow,
    mu_flow,
    r: float,
    paths: list[JumpPath],
) -> CostEstimate:
    """Monte Carlo cost of ``policy`` against the population flow ``mu_flow``.

    ``r > 0`` gives the discounted cost truncated at the path horizon;
    ``r = 0`` the time average over ``[0, T]``. ``mu_flow`` is a single
    distribution or a pair ``(times, mus)``; between grid times the
    population is held at the interval average.
    """
    if r < 0:
        raise ValueError("discount must be nonnegative")
    if not paths:
        raise ValueError("empty path set")
    if isinstance(mu_flow, tuple):
        mu_times, mus = (np.asarray(a, dtype=float) for a in mu_flow)
    else:
        mu_times, mus = np.array([0.0]), np.asarray(mu_flow, dtype=float)[None]

    grid = np.unique(np.concatenate([policy.times, mu_times]))
    pk = policy.index(grid)
    f_rate = np.stack([policy_cost(spec, policy.rates[k]) for k in pk])
    if len(mu_times) == 1:
        mu_mid = np.repeat(mus, len(grid), axis=0)
    else:
        nxt = np.append(grid[1:], grid[-1])
        mu_mid = 0.5 * (_interp_rows(mu_times, mus, grid) + _interp_rows(mu_times, mus, nxt))
    F_rate = np.stack([mean_field_cost_all(spec, m) for m in mu_mid])
    rate_by_interval = f_rate + F_rate

    costs = np.array([_path_cost(p, grid, rate_by_interval, r) for p in paths])
    se = costs.std(ddof=1) / np.sqrt(len(costs)) if len(costs) > 1 else 0.0
    return CostEstimate(float(costs.mean()), float(se), len(costs))


def _interp_rows(xp, fp, x):
    return np.stack([np.interp(x, xp, fp[:, j]) for j in range(fp.shape[1])], axis=1)


def write_paths_csv(paths: list[JumpPath], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "time", "state"])
        for i, p in enumerate(paths):
            for t, s in zip(p.times, p.states):
                w.writerow([i, f"{t:.17g}", int(s) + 1])
