"""Linear forward-backward systems around a stationary solution or a discounted flow.

With center ``(u_c, mu_c)`` and generator ``Q_c`` the unknowns solve

    dv/dt = (r I - Q_c) v - DF m - A,       v(T) = 0,
    dm/dt = m Q_c + G v + B,                m(0) = m0,

where ``G = sum_y mu_c,y J_y`` collects the selector Jacobians. ``G`` is
symmetric and negative semidefinite, ``v . G v = -sum_y mu_y sum_x'
|v_x - v_y|^2 / c`` with the primed sum over unclamped rates.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .core import as_tangent_vector, delta_matrix, e_dir
from .markov import decay_diagnostic
from .mfg_solver import (
    ConvergenceError,
    FlowPair,
    StationarySolution,
    default_dt,
    midpoints,
    solve_discounted,
)
from .model import ModelSpec, mean_field_cost_grad_all, rate_matrix


class ClampWarning(UserWarning):
    """Some selector rate sits on the box; the concavity constant does not apply there."""


def coupling_matrices(spec: ModelSpec, u_nodes, mu_nodes) -> np.ndarray:
    """``G(t)`` at every node: ``G[x, z] = sum_y mu_y d gamma*_x(y, Delta_y u) / dp_z``."""
    free = K.free_mask_along(np.ascontiguousarray(u_nodes), spec.c, spec.kappa, spec.a_l, spec.a_u)
    W = np.asarray(mu_nodes)[:, :, None] * free / spec.c
    G = W + np.transpose(W, (0, 2, 1))
    idx = np.arange(spec.d)
    G[:, idx, idx] -= W.sum(axis=1) + W.sum(axis=2)
    return G


@dataclass
class LinearizedSolution:
    spec: ModelSpec
    r: float
    t: np.ndarray
    v: np.ndarray
    m: np.ndarray
    A: np.ndarray
    B: np.ndarray
    center_u: np.ndarray
    center_mu: np.ndarray
    iterations: int = 0
    picard_change: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def delta_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(delta_matrix(vk)) for vk in self.v])

    def size(self) -> np.ndarray:
        """``|m(t)| + |Delta v(t)|`` on the grid."""
        return np.linalg.norm(self.m, axis=1) + self.delta_norms()

    def pairing(self) -> np.ndarray:
        return np.einsum("kd,kd->k", self.m, self.v)

    def clamp_active(self, sel=slice(None)) -> bool:
        free = K.free_mask_along(np.ascontiguousarray(self.center_u[sel]), self.spec.c,
                                 self.spec.kappa, self.spec.a_l, self.spec.a_u)
        off = ~np.eye(self.spec.d, dtype=bool)
        return bool(np.any(free[:, off] == 0))

    def residuals(self) -> tuple[float, float]:
        """Defects of one more backward and forward sweep with the stored data."""
        v2 = _backward(self, self.m)
        m2 = _forward(self, self.v)
        return float(np.abs(v2 - self.v).max()), float(np.abs(m2 - self.m).max())

    def to_csv(self, path) -> None:
        d = self.spec.d
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"v_{i+1}" for i in range(d)] + [f"m_{i+1}" for i in range(d)])
            for k, t in enumerate(self.t):
                w.writerow([f"{x:.17g}" for x in (t, *self.v[k], *self.m[k])])


def _sample(source, t, d):
    """Node and midpoint samples of a source given as None, callable or node array."""
    if source is None:
        z = np.zeros((t.size, d))
        return z, z[:-1]
    if callable(source):
        tm = 0.5 * (t[:-1] + t[1:])
        nodes = np.array([np.asarray(source(s), dtype=float) for s in t])
        mids = np.array([np.asarray(source(s), dtype=float) for s in tm])
        return nodes, mids
    nodes = np.asarray(source, dtype=float)
    if nodes.shape != (t.size, d):
        raise ValueError(f"source has shape {nodes.shape}, grid needs {(t.size, d)}")
    return nodes, midpoints(nodes)


def _backward(sol, m):
    s = -(m @ sol.info["DF"].T) - sol.A
    s_mid = -(midpoints(m) @ sol.info["DF"].T) - sol.info["A_mid"]
    return K.backward_linear(np.zeros(sol.spec.d), sol.info["M"], sol.info["M_mid"], s, s_mid, sol.dt)


def _forward(sol, v):
    s = np.einsum("kxz,kz->kx", sol.info["G"], v) + sol.B
    s_mid = np.einsum("kxz,kz->kx", sol.info["G_mid"], midpoints(v)) + sol.info["B_mid"]
    return K.forward_linear(sol.m[0], sol.info["Q"],
                            sol.info["Q_mid"], s, s_mid, sol.dt)


def _center_arrays(spec, center, T, dt, tol):
    if isinstance(center, FlowPair):
        return center.t, center.u, center.mu, float(center.r)
    if isinstance(center, StationarySolution):
        if center.r <= 0:
            raise ValueError("linearization needs a discounted center (r > 0)")
        if T is None:
            gap, _ = decay_diagnostic(rate_matrix(spec, center.value))
            T = max(4.0, float(np.ceil(np.log(1.0 / tol) / gap)))
        dt = default_dt(spec) if dt is None else dt
        n = max(int(round(T / dt)), 4)
        t = np.linspace(0.0, T, n + 1)
        u = np.repeat(center.value[None], n + 1, axis=0)
        mu = np.repeat(center.measure[None], n + 1, axis=0)
        return t, u, mu, float(center.r)
    raise TypeError("center must be a FlowPair or a StationarySolution")


def solve_linearized(
    spec: ModelSpec,
    center,
    m0,
    A=None,
    B=None,
    T: float | None = None,
    dt: float | None = None,
    *,
    tol: float = 1e-13,
    max_iter: int = 2000,
    omega: float = 0.5,
) -> LinearizedSolution:
    """Damped Picard solve of the linearized system with ``v(T) = 0``.

    ``center`` is a stationary solution (a horizon is chosen from its
    mixing rate unless ``T`` is given) or a solved flow, whose grid is
    reused. Sources are callables of ``t`` or arrays on the grid.
    """
    t, u_c, mu_c, r = _center_arrays(spec, center, T, dt, tol)
    d = spec.d
    m0 = as_tangent_vector(m0, tol=1e-10)
    A_n, A_m = _sample(A, t, d)
    B_n, B_m = _sample(B, t, d)
    if np.abs(B_n.sum(axis=1)).max() > 1e-10:
        raise ValueError("source B must take values in the tangent space")

    u_mid = midpoints(u_c)
    mu_mid = midpoints(mu_c)
    par = (spec.c, spec.kappa, spec.a_l, spec.a_u)
    Q = K.rates_along(np.ascontiguousarray(u_c), *par)
    Q_mid = K.rates_along(np.ascontiguousarray(u_mid), *par)
    eye = np.eye(d)[None]
    info = {
        "Q": Q,
        "Q_mid": Q_mid,
        "M": r * eye - Q,
        "M_mid": r * eye - Q_mid,
        "G": coupling_matrices(spec, u_c, mu_c),
        "G_mid": coupling_matrices(spec, u_mid, mu_mid),
        "DF": mean_field_cost_grad_all(spec),
        "A_mid": A_m,
        "B_mid": B_m,
    }
    sol = LinearizedSolution(spec, r, t, None, None, A_n, B_n, u_c, mu_c, info=info)

    sol.m = np.repeat(m0[None], t.size, axis=0)
    m = _forward(sol, np.zeros_like(sol.m))
    history = []
    scale = max(1.0, float(np.abs(m0).max()), float(np.abs(A_n).max()), float(np.abs(B_n).max()))
    for it in range(1, max_iter + 1):
        v = _backward(sol, m)
        m_new = _forward(sol, v)
        change = float(np.abs(m_new - m).max())
        history.append(change)
        if change <= tol * scale:
            sol.m = m_new
            sol.v = _backward(sol, m_new)
            sol.iterations = it
            sol.picard_change = change
            sol.info["picard_history"] = history
            return sol
        if len(history) > 1 and change > history[-2]:
            omega = max(0.5 * omega, 1e-3)
        m = (1 - omega) * m + omega * m_new
    raise ConvergenceError(f"linearized Picard stalled at {change:.3g}", history)


def duality_gap(solution: LinearizedSolution, t1: float, t2: float) -> float:
    """Right minus left side of the linearized duality inequality on ``[t1, t2]``.

    Left: ``int e^{-rs} |Delta v|^2``. Right: ``C_a (-[e^{-rs} m.v]_{t1}^{t2})
    + C_b int e^{-rs} |B|^2`` with ``C_a = 2/k0``, ``C_b = 1/(2 d k0^2)`` and
    ``k0 = min mu_c / c`` over the window. The reported constant is
    ``C1 = max(C_a, C_b)`` (see ``duality_constants``).
    """
    sol = solution
    t = sol.t
    sel = (t >= t1 - 1e-12) & (t <= t2 + 1e-12)
    if sel.sum() < 2:
        raise ValueError("window must contain at least two grid points")
    if np.abs(sol.A[sel]).max() > 0:
        raise ValueError("duality inequality needs A = 0 on the window")
    if sol.clamp_active(sel):
        warnings.warn("clamped selector on the window; concavity bound may fail", ClampWarning)
    ca, cb = duality_constants(sol, sel)
    ts = t[sel]
    w = np.exp(-sol.r * ts)
    lhs = np.trapezoid(w * sol.delta_norms()[sel] ** 2, ts)
    pair = w * sol.pairing()[sel]
    src = np.trapezoid(w * np.sum(sol.B[sel] ** 2, axis=1), ts)
    return float(ca * -(pair[-1] - pair[0]) + cb * src - lhs)


def duality_constants(sol: LinearizedSolution, sel=slice(None)) -> tuple[float, float]:
    k0 = float(sol.center_mu[sel].min()) / sol.spec.c
    return 2.0 / k0, 1.0 / (2 * sol.spec.d * k0**2)


def derivative_field(
    spec: ModelSpec,
    r: float,
    eta,
    *,
    horizon: float,
    dt: float | None = None,
    flow: FlowPair | None = None,
    tol: float = 1e-13,
) -> np.ndarray:
    """Matrix ``D[x, z]``: derivative of ``U_r(x, .)`` at ``eta`` along ``e_z - e_1``.

    Column 0 is identically zero. ``flow`` may pass an already solved
    discounted flow from ``eta`` on the same horizon.
    """
    if flow is None:
        flow = solve_discounted(spec, r, eta, horizon=horizon, dt=dt)
    D = np.zeros((spec.d, spec.d))
    for z in range(1, spec.d):
        lin = solve_linearized(spec, flow, e_dir(0, z, spec.d), tol=tol)
        D[:, z] = lin.v[0]
    return D
