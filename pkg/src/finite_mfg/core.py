"""Simplex and tangent-space calculus on P([d]).

States are 0-based throughout the code; ``x = 0`` is the first state.
Probability vectors, zero-sum tangent vectors and value vectors are plain
1-d float arrays. The ``as_*`` helpers validate them and are the only
places where a simplex point may be renormalized.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np

SIMPLEX_TOL = 1e-12


class SimplexError(ValueError):
    """Raised when a vector is not a probability vector."""


class BoundaryError(ValueError):
    """Raised when a simplex direction leaves P([d]) on both sides."""


def as_simplex_point(weights, *, renormalize: bool = False) -> np.ndarray:
    """Validate ``weights`` as a point of P([d]).

    With ``renormalize=True`` small negative entries are clipped and the
    vector rescaled to unit mass before the check. This is meant for
    construction sites only (config files, user input); solvers never call it
    with renormalization.
    """
    eta = np.array(weights, dtype=float).ravel()
    if eta.size < 2:
        raise SimplexError(f"need at least 2 states, got {eta.size}")
    if not np.all(np.isfinite(eta)):
        raise SimplexError(f"non-finite weights {eta}")
    if renormalize:
        eta = np.clip(eta, 0.0, None)
        total = eta.sum()
        if total <= 0:
            raise SimplexError("weights have no positive mass")
        eta = eta / total
    if eta.min() < -SIMPLEX_TOL:
        raise SimplexError(f"negative weight {eta.min():.3g} in {eta}")
    if abs(eta.sum() - 1.0) > SIMPLEX_TOL:
        raise SimplexError(f"weights sum to {eta.sum():.17g}, not 1: {eta}")
    return eta


def as_tangent_vector(components, tol: float = SIMPLEX_TOL) -> np.ndarray:
    m = np.array(components, dtype=float).ravel()
    if abs(m.sum()) > tol * max(1.0, np.abs(m).sum()):
        raise ValueError(f"tangent vector must sum to zero, got {m.sum():.3g}")
    return m


def _check_state(x: int, d: int) -> None:
    if not 0 <= x < d:
        raise IndexError(f"state {x} out of range for d={d}")


def delta(x: int, p) -> np.ndarray:
    """Difference vector ``(p_y - p_x)_y``; its ``x`` component is zero."""
    p = np.asarray(p, dtype=float)
    _check_state(x, p.shape[-1])
    return p - p[..., x : x + 1]


def delta_matrix(p) -> np.ndarray:
    """All difference vectors at once: row ``x`` is ``delta(x, p)``."""
    p = np.asarray(p, dtype=float)
    return p[None, :] - p[:, None]


def delta_norm(p) -> float:
    """Frobenius norm of the stacked difference vectors."""
    return float(np.linalg.norm(delta_matrix(p)))


def center(b) -> np.ndarray:
    """Constant vector holding the mean of ``b``."""
    b = np.asarray(b, dtype=float)
    return np.full_like(b, b.mean())


def e_dir(y: int, z: int, d: int) -> np.ndarray:
    """Simplex direction ``e_z - e_y`` (mass moves from ``y`` to ``z``)."""
    _check_state(y, d)
    _check_state(z, d)
    e = np.zeros(d)
    e[z] += 1.0
    e[y] -= 1.0
    return e


def lattice_size(d: int, n: int) -> int:
    return math.comb(n + d - 1, d - 1)


def lattice(d: int, n: int) -> np.ndarray:
    """All points of P([d]) with coordinates in ``{0, 1/n, ..., 1}``.

    Rows are in lexicographic order of the integer compositions
    ``(k_1, ..., k_d)``, so for ``d=2, n=2`` the rows are
    ``(0, 1), (1/2, 1/2), (1, 0)``.
    """
    if d < 2:
        raise ValueError(f"lattice needs d >= 2, got {d}")
    if n < 1:
        raise ValueError(f"lattice needs n >= 1, got {n}")
    rows = []
    # stars and bars: choose the d-1 bar positions among n+d-1 slots
    for bars in itertools.combinations(range(n + d - 1), d - 1):
        edges = (-1,) + bars + (n + d - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(d)])
    pts = np.array(sorted(rows), dtype=float) / n
    return pts


def interior_mask(points: np.ndarray, h: float) -> np.ndarray:
    """Points whose every coordinate is at least ``h``."""
    return np.all(np.asarray(points) >= h - 1e-15, axis=1)


def directional_derivative_fd(
    K: Callable[[np.ndarray], float], eta, y: int, z: int, h: float
) -> float:
    """Finite-difference ``D_{yz} K(eta)`` along ``e_z - e_y``.

    Central quotient when both ``eta +- h e_{yz}`` stay in the simplex,
    otherwise the one-sided quotient that does.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    eta = np.asarray(eta, dtype=float)
    d = eta.size
    if y == z:
        return 0.0
    e = e_dir(y, z, d)
    fwd_ok = eta[y] >= h - 1e-15
    bwd_ok = eta[z] >= h - 1e-15
    if fwd_ok and bwd_ok:
        return (K(eta + h * e) - K(eta - h * e)) / (2 * h)
    if fwd_ok:
        return (K(eta + h * e) - K(eta)) / h
    if bwd_ok:
        return (K(eta) - K(eta - h * e)) / h
    raise BoundaryError(
        f"direction e_{y}{z} infeasible at {eta} with step {h}"
    )
