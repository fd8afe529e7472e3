"""Estimator-style wrappers around the solvers.

Rows of ``X`` are population distributions. ``fit`` solves the stationary
problem (or builds a master field); ``predict`` returns value vectors for
the rows of ``X``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import SIMPLEX_TOL, SimplexError
from .master import build_discounted_field, evaluate_Ur, grad_Ur, solve_ergodic_master
from .mfg_solver import solve_discounted, solve_ergodic, solve_stationary_discounted
from .model import ModelSpec


def check_distributions(X, d: int) -> np.ndarray:
    """2-D float array whose rows are points of the ``d``-simplex."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != d:
        raise ValueError(f"X has {X.shape[1]} columns, model has d={d}")
    if np.any(X < -SIMPLEX_TOL) or np.any(np.abs(X.sum(axis=1) - 1.0) > SIMPLEX_TOL * d):
        raise SimplexError("rows of X must be probability vectors")
    return np.clip(X, 0.0, None)


class _ModelParams(BaseEstimator):
    def __init__(self, d=2, a_l=0.1, a_u=2.0, kappa=1.0, c=1.0, beta=1.0, g=None):
        self.d = d
        self.a_l = a_l
        self.a_u = a_u
        self.kappa = kappa
        self.c = c
        self.beta = beta
        self.g = g

    def _spec(self) -> ModelSpec:
        g = None if self.g is None else tuple(self.g)
        return ModelSpec(self.d, self.a_l, self.a_u, self.kappa, self.c, self.beta, g)


class DiscountedMFG(_ModelParams):
    """Discounted game. ``fit`` finds the stationary pair; ``predict`` gives ``U_r(., eta)``."""

    def __init__(self, r=0.1, tol=1e-12, d=2, a_l=0.1, a_u=2.0, kappa=1.0, c=1.0,
                 beta=1.0, g=None):
        super().__init__(d, a_l, a_u, kappa, c, beta, g)
        self.r = r
        self.tol = tol

    def fit(self, X=None, y=None):
        self.spec_ = self._spec()
        sol = solve_stationary_discounted(self.spec_, self.r, self.tol)
        self.value_ = sol.value
        self.measure_ = sol.measure
        self.n_iter_ = sol.iterations
        return self

    def predict(self, X):
        check_is_fitted(self, "spec_")
        X = check_distributions(X, self.spec_.d)
        return np.stack([evaluate_Ur(self.spec_, self.r, eta) for eta in X])

    def gradient(self, X):
        check_is_fitted(self, "spec_")
        X = check_distributions(X, self.spec_.d)
        return np.stack([grad_Ur(self.spec_, self.r, eta) for eta in X])

    def flow(self, mu0, tol=1e-10):
        check_is_fitted(self, "spec_")
        return solve_discounted(self.spec_, self.r, mu0, tol)


class ErgodicMFG(_ModelParams):
    """Long-run average game; ``predict`` returns the ergodic cost for every row."""

    def __init__(self, tol=1e-10, d=2, a_l=0.1, a_u=2.0, kappa=1.0, c=1.0, beta=1.0, g=None):
        super().__init__(d, a_l, a_u, kappa, c, beta, g)
        self.tol = tol

    def fit(self, X=None, y=None):
        self.spec_ = self._spec()
        sol = solve_ergodic(self.spec_, self.tol)
        self.rho_ = sol.rho
        self.value_ = sol.value
        self.measure_ = sol.measure
        self.flagged_ = sol.flagged
        return self

    def predict(self, X):
        check_is_fitted(self, "rho_")
        X = check_distributions(X, self.spec_.d)
        return np.full(X.shape[0], self.rho_)


class MasterField(TransformerMixin, _ModelParams):
    """Master field on a lattice (``r = 0`` gives the ergodic field).

    ``predict`` extends the lattice values to any distribution by a first
    order step from the nearest lattice point; ``transform`` returns the
    flattened gradient rows there.
    """

    def __init__(self, r=0.05, n=20, tol=1e-5, d=2, a_l=0.1, a_u=2.0, kappa=1.0, c=1.0,
                 beta=1.0, g=None):
        super().__init__(d, a_l, a_u, kappa, c, beta, g)
        self.r = r
        self.n = n
        self.tol = tol

    def fit(self, X=None, y=None):
        spec = self._spec()
        if self.r == 0:
            self.field_ = solve_ergodic_master(spec, self.n, self.tol)
            self.rho_ = self.field_.rho
        else:
            self.field_ = build_discounted_field(spec, self.r, self.n)
        self.spec_ = spec
        return self

    def _nearest(self, X):
        P = self.field_.points
        idx = np.argmin(np.abs(X[:, None, :] - P[None]).sum(axis=2), axis=1)
        return idx, X - P[idx]

    def predict(self, X):
        check_is_fitted(self, "field_")
        X = check_distributions(X, self.spec_.d)
        idx, step = self._nearest(X)
        # gradient entries pair with e_z - e_1; tangent steps have zero sum
        return self.field_.values[idx] + np.einsum("nxz,nz->nx", self.field_.gradients[idx], step)

    def transform(self, X):
        check_is_fitted(self, "field_")
        X = check_distributions(X, self.spec_.d)
        idx, _ = self._nearest(X)
        return self.field_.gradients[idx].reshape(len(idx), -1)
