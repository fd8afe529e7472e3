"""Master fields on a simplex lattice: discounted ``U_r`` and ergodic ``(U_0, rho)``.

``U_r(x, eta)`` is the time-zero value of the discounted system started
from ``eta``; its simplex gradient comes from linearized solves. All
evaluations for one discount share a fixed horizon and grid, so ``U_r`` is
a smooth function of ``eta`` at the discrete level and finite differences
of it can be compared with the linearized derivative.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import lattice
from .linearized import derivative_field
from .mfg_solver import (
    ConvergenceError,
    R_PROBE,
    _stationary_cached,
    solve_discounted,
    solve_ergodic,
)
from .model import (
    ModelSpec,
    hamiltonian_all,
    lasry_lions,
    mean_field_cost_all,
    rate_matrix,
)

LGR = logging.getLogger(__name__)

HORIZON_TOL = 1e-11


@lru_cache(maxsize=128)
def master_horizon(spec: ModelSpec, r: float, tol: float = HORIZON_TOL) -> float:
    """Horizon that the doubling search needs from every vertex of the simplex."""
    T = 0.0
    for x in range(spec.d):
        T = max(T, solve_discounted(spec, r, np.eye(spec.d)[x], tol).horizon)
    return T


def evaluate_Ur(spec: ModelSpec, r: float, eta, *, dt: float | None = None,
                horizon: float | None = None) -> np.ndarray:
    """``U_r(., eta)``: time-zero value of the discounted system from ``eta``."""
    _check_r(r)
    T = master_horizon(spec, float(r)) if horizon is None else horizon
    return solve_discounted(spec, r, eta, horizon=T, dt=dt).u[0].copy()


def grad_Ur(spec: ModelSpec, r: float, eta, *, dt: float | None = None,
            horizon: float | None = None) -> np.ndarray:
    """Rows ``D_1 U_r(x, eta)``; entry ``[x, z]`` is the derivative along ``e_z - e_1``."""
    _check_r(r)
    T = master_horizon(spec, float(r)) if horizon is None else horizon
    return derivative_field(spec, r, eta, horizon=T, dt=dt)


def _check_r(r):
    if not 0 < r <= R_PROBE:
        raise ValueError(f"discount {r} outside (0, {R_PROBE}]")


@dataclass
class MasterField:
    spec: ModelSpec
    r: float
    points: np.ndarray  # (N, d) lattice
    values: np.ndarray  # (N, d): values[i, x] = U(x, points[i])
    gradients: np.ndarray  # (N, d, d): gradients[i, x, z] = D_{1z} U(x, points[i])
    rho: float | None = None
    info: dict = field(default_factory=dict)

    def index(self, eta) -> int:
        eta = np.asarray(eta, dtype=float)
        dist = np.abs(self.points - eta[None]).max(axis=1)
        i = int(np.argmin(dist))
        if dist[i] > 1e-9:
            raise KeyError("point is not on the lattice")
        return i

    def interior(self) -> np.ndarray:
        return np.all(self.points > 1e-12, axis=1)

    def residuals(self) -> np.ndarray:
        """Master-equation residual at every (lattice point, state)."""
        return np.array([[residual(self.spec, self, i, x) for x in range(self.spec.d)]
                         for i in range(len(self.points))])

    def grad_lipschitz(self) -> float:
        """Largest gradient difference quotient over lattice neighbours."""
        P = self.points
        h = 1.0 / self.info.get("n", _lattice_n(P))
        worst = 0.0
        for i in range(len(P)):
            dist = np.abs(P - P[i]).sum(axis=1)
            nb = np.flatnonzero(np.abs(dist - 2 * h) < 1e-9)
            for j in nb:
                diff = np.abs(self.gradients[i] - self.gradients[j]).max()
                worst = max(worst, diff / np.linalg.norm(P[i] - P[j]))
        return worst

    def to_csv(self, path) -> None:
        d = self.spec.d
        res = self.residuals()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"eta_{i+1}" for i in range(d)] + ["x", "U"]
                       + [f"dU_{z+1}" for z in range(d)] + ["residual"])
            for i, eta in enumerate(self.points):
                for x in range(d):
                    row = [*eta, x + 1, self.values[i, x], *self.gradients[i, x], res[i, x]]
                    w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in map(_py, row)])

    def summary(self, trials: int = 200, seed: int = 0) -> dict:
        res = np.abs(self.residuals())
        out = {
            "r": self.r,
            "lattice_points": int(len(self.points)),
            "max_residual": float(res.max()),
            "max_interior_residual": float(res[self.interior()].max()) if self.interior().any() else 0.0,
            "monotonicity_worst": monotonicity_check(self, trials, seed),
            "gradient_lipschitz": self.grad_lipschitz(),
            "max_abs_rU": float(np.abs(self.r * self.values).max()),
        }
        if self.rho is not None:
            out["rho"] = self.rho
        out.update({k: v for k, v in self.info.items() if np.isscalar(v)})
        return out


def _py(v):
    return float(v) if isinstance(v, (np.floating, float)) else int(v)


def _lattice_n(P):
    steps = np.abs(np.diff(P, axis=0))
    return int(round(1.0 / steps[steps > 1e-12].min()))


def build_discounted_field(spec: ModelSpec, r: float, n: int, *, dt: float | None = None,
                           horizon: float | None = None) -> MasterField:
    """``U_r`` and its gradient at every point of the resolution-``n`` lattice."""
    _check_r(r)
    T = master_horizon(spec, float(r)) if horizon is None else horizon
    P = lattice(spec.d, n)
    vals = np.empty((len(P), spec.d))
    grads = np.empty((len(P), spec.d, spec.d))
    for i, eta in enumerate(P):
        flow = solve_discounted(spec, r, eta, horizon=T, dt=dt)
        vals[i] = flow.u[0]
        grads[i] = derivative_field(spec, r, eta, horizon=T, flow=flow)
    return MasterField(spec, float(r), P, vals, grads, None, {"n": n, "horizon": T})


@lru_cache(maxsize=64)
def cached_field(spec: ModelSpec, r: float, n: int) -> MasterField:
    """Shared (do not mutate) discounted field with the default grid."""
    return build_discounted_field(spec, r, n)


def residual(spec: ModelSpec, field: MasterField, eta, x: int) -> float:
    """Left minus right side of the master equation at ``(x, eta)``.

    ``eta`` is a lattice point or its index. The transport term uses
    ``D_{yz} = D_{1z} - D_{1y}``; since selector rows sum to zero it
    reduces to ``eta . Q(U) D_1 U(x)``.
    """
    i = int(eta) if np.isscalar(eta) else field.index(eta)
    P = field.points[i]
    U = field.values[i]
    D = field.gradients[i, x]
    Q = rate_matrix(spec, U)
    transport = P @ (Q @ D)
    rhs = hamiltonian_all(spec, U)[x] + transport + mean_field_cost_all(spec, P)[x]
    lhs = field.rho if field.r == 0 else field.r * U[x]
    return float(lhs - rhs)


def monotonicity_check(field: MasterField, trials: int = 200, seed: int = 0) -> float:
    """Smallest Lasry-Lions pairing over random lattice pairs (0 for one point)."""
    rng = np.random.default_rng(seed)
    N = len(field.points)
    worst = np.inf
    for _ in range(trials):
        i = rng.integers(N)
        j = (i + rng.integers(1, N)) % N if N > 1 else i
        val = lasry_lions(field.values[i], field.values[j], field.points[i], field.points[j])
        worst = min(worst, val)
    return float(worst) if np.isfinite(worst) else 0.0


# -- ergodic master ----------------------------------------------------------


def _rho_extrapolate(rs, rhos):
    """Fit ``rho + a sqrt(r) + b r`` through the last three ladder points."""
    rs = np.asarray(rs[-3:], dtype=float)
    rhos = np.asarray(rhos[-3:], dtype=float)
    if len(rs) < 3:
        return float(rhos[-1])
    V = np.stack([np.ones(3), np.sqrt(rs), rs], axis=1)
    return float(np.linalg.solve(V, rhos)[0])


def solve_ergodic_master(
    spec: ModelSpec,
    n: int,
    tol: float = 1e-5,
    *,
    r0: float = 0.1,
    max_rungs: int = 15,
    min_rungs: int = 3,
    dt: float | None = None,
) -> MasterField:
    """Vanishing-discount limit of the normalized fields ``U_r(x, .) - U_r(1, mu_r)``.

    On the halving ladder each normalized field is combined with the
    previous one by a Richardson step ``2 W_{r/2} - W_r``; the ladder stops
    when two consecutive extrapolated fields (values and gradients) agree
    within ``tol``. ``rho`` is extrapolated from ``r U_r(1, mu_r)`` and then
    polished through the master equation at ``eta = mu``.
    """
    if n < 4:
        raise ValueError("lattice resolution must be at least 4")
    erg = solve_ergodic(spec)
    rs, rhos, diffs = [], [], []
    prev_norm = prev_ext = None
    base_vals = []
    for k in range(max_rungs):
        r = r0 * 2.0**-k
        f = build_discounted_field(spec, r, n, dt=dt) if dt is not None else cached_field(spec, r, n)
        stat = _stationary_cached(spec, r, 1e-13)
        shift = stat.value[0]
        norm_vals = f.values - shift
        # value at the stationary law, normalized the same way
        base_vals.append(stat.value - shift)
        rs.append(r)
        rhos.append(r * shift)
        cur = (norm_vals, f.gradients)
        if prev_norm is not None:
            ext = (2 * cur[0] - prev_norm[0], 2 * cur[1] - prev_norm[1])
            if prev_ext is not None:
                diff = max(np.abs(ext[0] - prev_ext[0]).max(), np.abs(ext[1] - prev_ext[1]).max())
                diffs.append(float(diff))
                LGR.info("ergodic master rung r=%.3g diff=%.3g", r, diff)
                if diff <= tol and k + 1 >= min_rungs:
                    break
            prev_ext = ext
        prev_norm = cur
    else:
        raise ConvergenceError("discount ladder exhausted before fields settled", diffs)

    points = f.points
    rho_ladder = _rho_extrapolate(rs, rhos)
    u0_bar = 2 * base_vals[-1] - base_vals[-2]
    # polish: the ergodic master equation at eta = mu reduces to the ergodic HJB
    mu = erg.measure
    rho_polished = float(np.mean(hamiltonian_all(spec, u0_bar) + mean_field_cost_all(spec, mu)))
    out = MasterField(spec, 0.0, points, ext[0], ext[1], rho_polished, {
        "n": n,
        "r0": r0,
        "rungs": len(rs),
        "smallest_r": rs[-1],
        "rho_ladder": rho_ladder,
        "rho_ergodic": erg.rho,
        "rho_gap": abs(rho_polished - erg.rho),
        "ladder_diffs": diffs,
        "u0_at_mu": u0_bar,
    })
    return out
