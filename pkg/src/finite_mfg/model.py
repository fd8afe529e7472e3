"""Quadratic-cost finite-state model: Hamiltonian, optimal rates, mean-field cost.

Running cost ``f(x, a) = sum_{y != x} c/2 (a_y - kappa)^2`` over jump rates
``a_y in [a_l, a_u]`` and mean-field cost ``F(x, eta) = beta eta_x + g_x``.
With ``q_y = p_y - p_x`` the minimizer of ``f(x, a) + a . p`` is the box
projection ``clamp(kappa - q_y / c, a_l, a_u)``, which gives closed forms for
the Hamiltonian, the optimal rate selector and its Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .core import as_simplex_point


@dataclass(frozen=True)
class ModelSpec:
    d: int = 2
    a_l: float = 0.1
    a_u: float = 2.0
    kappa: float = 1.0
    c: float = 1.0
    beta: float = 1.0
    g: tuple = field(default=None)

    def __post_init__(self):
        g = (0.0,) * self.d if self.g is None else tuple(float(v) for v in self.g)
        object.__setattr__(self, "g", g)
        if self.d < 2:
            raise ValueError(f"d must be >= 2, got {self.d}")
        if len(g) != self.d:
            raise ValueError(f"g has {len(g)} entries, expected d={self.d}")
        if not 0 < self.a_l < self.kappa < self.a_u:
            raise ValueError(
                f"need 0 < a_l < kappa < a_u, got {self.a_l}, {self.kappa}, {self.a_u}"
            )
        if self.c <= 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")

    @property
    def g_array(self) -> np.ndarray:
        return np.array(self.g, dtype=float)

    @property
    def cost_bound(self) -> float:
        """Bound C_{f+F} on |f + F| over admissible rates and P([d])."""
        worst_rate = max((self.kappa - self.a_l) ** 2, (self.a_u - self.kappa) ** 2)
        return (
            float(np.max(np.abs(self.g_array)))
            + self.beta
            + 0.5 * self.c * worst_rate * (self.d - 1)
        )

    @property
    def concavity(self) -> float:
        """C_{2,H}: -D^2_pp H >= C_{2,H} on the unclamped region."""
        return 1.0 / self.c

    @property
    def max_exit_rate(self) -> float:
        return (self.d - 1) * self.a_u

    def to_dict(self) -> dict:
        out = asdict(self)
        out["g"] = list(self.g)
        return out


def _check_x(spec: ModelSpec, x: int) -> None:
    if not 0 <= x < spec.d:
        raise IndexError(f"state {x} out of range for d={spec.d}")


def _optimal_offdiag(spec: ModelSpec, x: int, p) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    q = p - p[x]
    a = np.clip(spec.kappa - q / spec.c, spec.a_l, spec.a_u)
    return a, q


def running_cost(spec: ModelSpec, x: int, a) -> float:
    """f(x, a); the diagonal entry ``a_x`` is ignored."""
    _check_x(spec, x)
    a = np.asarray(a, dtype=float)
    mask = np.arange(spec.d) != x
    return float(0.5 * spec.c * np.sum((a[mask] - spec.kappa) ** 2))


def hamiltonian(spec: ModelSpec, x: int, p) -> float:
    _check_x(spec, x)
    a, q = _optimal_offdiag(spec, x, p)
    terms = a * q + 0.5 * spec.c * (a - spec.kappa) ** 2
    terms[x] = 0.0
    return float(terms.sum())


def selector(spec: ModelSpec, x: int, p) -> np.ndarray:
    """Optimal rate vector gamma*(x, p); entry ``x`` is minus the exit rate."""
    _check_x(spec, x)
    a, _ = _optimal_offdiag(spec, x, p)
    a[x] = 0.0
    a[x] = -a.sum()
    return a


def selector_jacobian(spec: ModelSpec, x: int, p) -> np.ndarray:
    """Matrix ``J[y, z] = d gamma*_y(x, p) / d p_z``.

    Clamped coordinates contribute zero rows (the selector is locally
    constant there); row ``x`` balances the others so columns sum to zero.
    """
    _check_x(spec, x)
    p = np.asarray(p, dtype=float)
    d = spec.d
    raw = spec.kappa - (p - p[x]) / spec.c
    free = (raw > spec.a_l) & (raw < spec.a_u)
    free[x] = False
    J = np.zeros((d, d))
    for y in np.flatnonzero(free):
        J[y, y] = -1.0 / spec.c
        J[y, x] = 1.0 / spec.c
    J[x] = -J.sum(axis=0)
    return J


def mean_field_cost(spec: ModelSpec, x: int, eta) -> float:
    _check_x(spec, x)
    eta = np.asarray(eta, dtype=float)
    return float(spec.beta * eta[x] + spec.g[x])


def mean_field_cost_grad(spec: ModelSpec, x: int, eta=None) -> np.ndarray:
    """``D^eta_1 F(x, .)``: derivative along ``e_z - e_1`` for each ``z``.

    F is linear in eta, so the gradient does not depend on ``eta``.
    """
    _check_x(spec, x)
    grad = np.zeros(spec.d)
    grad[x] += spec.beta
    grad -= spec.beta * (x == 0)
    return grad


# -- vectorized helpers used by the solvers ---------------------------------


def rate_matrix(spec: ModelSpec, u) -> np.ndarray:
    """Generator whose row ``y`` is ``gamma*(y, Delta_y u)``."""
    u = np.asarray(u, dtype=float)
    q = u[None, :] - u[:, None]
    Q = np.clip(spec.kappa - q / spec.c, spec.a_l, spec.a_u)
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def hamiltonian_all(spec: ModelSpec, u) -> np.ndarray:
    """Vector ``(H(x, Delta_x u))_x``."""
    u = np.asarray(u, dtype=float)
    q = u[None, :] - u[:, None]
    a = np.clip(spec.kappa - q / spec.c, spec.a_l, spec.a_u)
    terms = a * q + 0.5 * spec.c * (a - spec.kappa) ** 2
    np.fill_diagonal(terms, 0.0)
    return terms.sum(axis=1)


def mean_field_cost_all(spec: ModelSpec, eta) -> np.ndarray:
    return spec.beta * np.asarray(eta, dtype=float) + spec.g_array


def mean_field_cost_grad_all(spec: ModelSpec) -> np.ndarray:
    """Matrix whose row ``x`` is ``D^eta_1 F(x, .)``."""
    return np.stack([mean_field_cost_grad(spec, x) for x in range(spec.d)])


def policy_cost(spec: ModelSpec, Q) -> np.ndarray:
    """Running cost ``f(x, Q[x])`` of a rate matrix, per state."""
    Q = np.asarray(Q, dtype=float)
    off = Q - np.diag(np.diag(Q))
    dev = np.where(np.eye(spec.d, dtype=bool), 0.0, off - spec.kappa)
    return 0.5 * spec.c * np.sum(dev**2, axis=1)


def clamp_count(spec: ModelSpec, u, margin: float = 0.0) -> int:
    """Number of off-diagonal selector entries within ``margin`` of the box."""
    u = np.asarray(u, dtype=float)
    raw = spec.kappa - (u[None, :] - u[:, None]) / spec.c
    hit = (raw <= spec.a_l + margin) | (raw >= spec.a_u - margin)
    np.fill_diagonal(hit, False)
    return int(hit.sum())


def check_rate_matrix(spec: ModelSpec, Q, tol: float = 1e-12) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (spec.d, spec.d):
        raise ValueError(f"rate matrix has shape {Q.shape}, expected {(spec.d, spec.d)}")
    off = Q[~np.eye(spec.d, dtype=bool)]
    if off.min() < spec.a_l - tol or off.max() > spec.a_u + tol:
        raise ValueError("off-diagonal rates leave [a_l, a_u]")
    if np.abs(Q.sum(axis=1)).max() > tol * max(1.0, np.abs(Q).max()):
        raise ValueError("rate matrix rows must sum to zero")
    return Q


def lasry_lions(values_eta, values_hat, eta, eta_hat) -> float:
    """``sum_x (K(x, eta) - K(x, eta_hat)) (eta_x - eta_hat_x)``."""
    return float(
        np.dot(np.asarray(values_eta) - np.asarray(values_hat),
               as_simplex_point(eta) - as_simplex_point(eta_hat))
    )
