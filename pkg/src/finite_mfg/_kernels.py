"""Compiled RK4 sweeps for the nonlinear and linearized forward-backward systems.

Every sweep takes the coupled variable at grid nodes and at step midpoints
(``*_mid[k]`` sits at ``t_k + dt/2``), so a full RK4 step needs no further
interpolation. Model parameters are passed as scalars: ``c, kappa, al, au``.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _rates(u, c, kappa, al, au):
    d = u.shape[0]
    Q = np.zeros((d, d))
    for y in range(d):
        tot = 0.0
        for x in range(d):
            if x != y:
                a = kappa - (u[x] - u[y]) / c
                if a < al:
                    a = al
                elif a > au:
                    a = au
                Q[y, x] = a
                tot += a
        Q[y, y] = -tot
    return Q


@njit(cache=True)
def _ham(u, c, kappa, al, au):
    d = u.shape[0]
    H = np.zeros(d)
    for x in range(d):
        s = 0.0
        for y in range(d):
            if y != x:
                q = u[y] - u[x]
                a = kappa - q / c
                if a < al:
                    a = al
                elif a > au:
                    a = au
                s += a * q + 0.5 * c * (a - kappa) ** 2
        H[x] = s
    return H


@njit(cache=True)
def _hjb_rhs(u, mu, r, c, kappa, al, au, beta, g):
    # du/dt = r u - H(x, Delta_x u) - F(x, mu)
    return r * u - _ham(u, c, kappa, al, au) - (beta * mu + g)


@njit(cache=True)
def _kfe_rhs(mu, u, c, kappa, al, au):
    Q = _rates(u, c, kappa, al, au)
    return mu @ Q


@njit(cache=True)
def backward_hjb(u_T, mu_nodes, mu_mid, dt, r, c, kappa, al, au, beta, g):
    n = mu_nodes.shape[0] - 1
    d = u_T.shape[0]
    u = np.empty((n + 1, d))
    u[n] = u_T
    h = -dt
    for k in range(n, 0, -1):
        uk = u[k]
        k1 = _hjb_rhs(uk, mu_nodes[k], r, c, kappa, al, au, beta, g)
        k2 = _hjb_rhs(uk + 0.5 * h * k1, mu_mid[k - 1], r, c, kappa, al, au, beta, g)
        k3 = _hjb_rhs(uk + 0.5 * h * k2, mu_mid[k - 1], r, c, kappa, al, au, beta, g)
        k4 = _hjb_rhs(uk + h * k3, mu_nodes[k - 1], r, c, kappa, al, au, beta, g)
        u[k - 1] = uk + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return u


@njit(cache=True)
def forward_kfe(mu0, u_nodes, u_mid, dt, c, kappa, al, au):
    n = u_nodes.shape[0] - 1
    d = mu0.shape[0]
    mu = np.empty((n + 1, d))
    mu[0] = mu0
    h = dt
    for k in range(n):
        mk = mu[k]
        k1 = _kfe_rhs(mk, u_nodes[k], c, kappa, al, au)
        k2 = _kfe_rhs(mk + 0.5 * h * k1, u_mid[k], c, kappa, al, au)
        k3 = _kfe_rhs(mk + 0.5 * h * k2, u_mid[k], c, kappa, al, au)
        k4 = _kfe_rhs(mk + h * k3, u_nodes[k + 1], c, kappa, al, au)
        mu[k + 1] = mk + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return mu


@njit(cache=True)
def forward_linear(m0, P_nodes, P_mid, s_nodes, s_mid, dt):
    """Integrate ``dm/dt = m P(t) + s(t)`` forward (row-vector convention)."""
    n = P_nodes.shape[0] - 1
    d = m0.shape[0]
    m = np.empty((n + 1, d))
    m[0] = m0
    h = dt
    for k in range(n):
        mk = m[k]
        k1 = mk @ P_nodes[k] + s_nodes[k]
        k2 = (mk + 0.5 * h * k1) @ P_mid[k] + s_mid[k]
        k3 = (mk + 0.5 * h * k2) @ P_mid[k] + s_mid[k]
        k4 = (mk + h * k3) @ P_nodes[k + 1] + s_nodes[k + 1]
        m[k + 1] = mk + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return m


@njit(cache=True)
def backward_linear(v_T, M_nodes, M_mid, s_nodes, s_mid, dt):
    """Integrate ``dv/dt = M(t) v + s(t)`` backward from ``v(T) = v_T``."""
    n = M_nodes.shape[0] - 1
    d = v_T.shape[0]
    v = np.empty((n + 1, d))
    v[n] = v_T
    h = -dt
    for k in range(n, 0, -1):
        vk = v[k]
        k1 = M_nodes[k] @ vk + s_nodes[k]
        k2 = M_mid[k - 1] @ (vk + 0.5 * h * k1) + s_mid[k - 1]
        k3 = M_mid[k - 1] @ (vk + 0.5 * h * k2) + s_mid[k - 1]
        k4 = M_nodes[k - 1] @ (vk + h * k3) + s_nodes[k - 1]
        v[k - 1] = vk + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return v


@njit(cache=True)
def rates_along(u_nodes, c, kappa, al, au):
    n = u_nodes.shape[0]
    d = u_nodes.shape[1]
    out = np.empty((n, d, d))
    for k in range(n):
        out[k] = _rates(u_nodes[k], c, kappa, al, au)
    return out


@njit(cache=True)
def hamiltonian_along(u_nodes, c, kappa, al, au):
    n = u_nodes.shape[0]
    out = np.empty_like(u_nodes)
    for k in range(n):
        out[k] = _ham(u_nodes[k], c, kappa, al, au)
    return out


@njit(cache=True)
def free_mask_along(u_nodes, c, kappa, al, au):
    """``free[k, y, x]`` is 1 when rate y->x is strictly inside the box."""
    n = u_nodes.shape[0]
    d = u_nodes.shape[1]
    out = np.zeros((n, d, d))
    for k in range(n):
        for y in range(d):
            for x in range(d):
                if x != y:
                    a = kappa - (u_nodes[k, x] - u_nodes[k, y]) / c
                    if a > al and a < au:
                        out[k, y, x] = 1.0
    return out
