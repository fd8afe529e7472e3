import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import ASYM, D3, FREE, SYM
from finite_mfg.core import e_dir
from finite_mfg.fitting import loglog_slope
from finite_mfg.linearized import (
    coupling_matrices,
    derivative_field,
    duality_constants,
    duality_gap,
    solve_linearized,
)
from finite_mfg.mfg_solver import solve_discounted, solve_finite_horizon, solve_stationary_discounted


@pytest.fixture(scope="module")
def center():
    return solve_stationary_discounted(ASYM, 0.1, 1e-13)


@pytest.fixture(scope="module")
def center3():
    return solve_stationary_discounted(D3, 0.1, 1e-13)


def test_zero_data_gives_zero(center):
    sol = solve_linearized(ASYM, center, [0.0, 0.0])
    assert np.abs(sol.v).max() == 0.0
    assert np.abs(sol.m).max() == 0.0


@pytest.mark.parametrize("ell", [2.0, -1.0])
def test_linearity_in_initial_data(center, ell):
    m0 = np.array([0.3, -0.3])
    a = solve_linearized(ASYM, center, m0, T=30.0)
    b = solve_linearized(ASYM, center, ell * m0, T=30.0)
    assert np.abs(b.v - ell * a.v).max() <= 1e-10
    assert np.abs(b.m - ell * a.m).max() <= 1e-10


def test_additivity_d3(center3):
    m1 = e_dir(0, 1, 3) * 0.2
    m2 = e_dir(2, 0, 3) * 0.1
    kw = dict(T=30.0)
    a = solve_linearized(D3, center3, m1, **kw)
    b = solve_linearized(D3, center3, m2, **kw)
    s = solve_linearized(D3, center3, m1 + m2, **kw)
    assert np.abs(s.v - a.v - b.v).max() <= 1e-9
    assert np.abs(s.m - a.m - b.m).max() <= 1e-9


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_pairing_sign_and_mass(center3, p, q):
    m0 = np.array([p, q, -p - q])
    sol = solve_linearized(D3, center3, m0, T=20.0)
    assert sol.pairing().min() >= -1e-10
    assert np.abs(sol.m.sum(axis=1)).max() <= 1e-12


def test_free_model_has_no_feedback():
    stat = solve_stationary_discounted(FREE, 0.1)
    sol = solve_linearized(FREE, stat, [0.4, -0.4], T=20.0)
    assert np.abs(sol.v).max() == 0.0
    D = derivative_field(FREE, 0.1, [0.3, 0.7], horizon=10.0)
    assert np.abs(D).max() == 0.0


def test_coupling_quadratic_form(center3, rng):
    G = coupling_matrices(D3, center3.value[None], center3.measure[None])[0]
    np.testing.assert_allclose(G.sum(axis=1), 0.0, atol=1e-14)
    np.testing.assert_allclose(G, G.T)
    for _ in range(20):
        v = rng.normal(size=3)
        assert v @ G @ v <= 1e-14


@pytest.mark.parametrize("m0", [[0.0, 0.0], [0.45, -0.45], [-0.2, 0.2]])
def test_duality_gap_nonnegative(center, m0):
    sol = solve_linearized(ASYM, center, m0, T=20.0)
    for t1, t2 in [(0, 20), (0, 5), (3, 12)]:
        assert duality_gap(sol, t1, t2) >= -1e-8


def test_duality_gap_with_source(center):
    B = lambda t: np.array([1.0, -1.0]) * np.exp(-t)
    sol = solve_linearized(ASYM, center, [0.2, -0.2], B=B, T=20.0)
    assert duality_gap(sol, 0, 20) >= -1e-8
    ca, cb = duality_constants(sol)
    assert ca > 0 and cb > 0


def test_duality_requires_zero_A(center):
    sol = solve_linearized(ASYM, center, [0.1, -0.1], A=lambda t: np.ones(2), T=10.0)
    with pytest.raises(ValueError):
        duality_gap(sol, 0, 10)


def test_source_must_be_tangent(center):
    with pytest.raises(ValueError):
        solve_linearized(ASYM, center, [0.1, -0.1], B=lambda t: np.ones(2), T=5.0)


def test_constant_shift_in_A(center):
    # a source constant across states only shifts v by a state-independent amount
    base = solve_linearized(ASYM, center, [0.2, -0.2], T=20.0)
    shifted = solve_linearized(ASYM, center, [0.2, -0.2], A=lambda t: np.full(2, 0.7), T=20.0)
    dv = shifted.v - base.v
    assert np.abs(dv[:, 0] - dv[:, 1]).max() <= 1e-10
    assert np.abs(shifted.m - base.m).max() <= 1e-10


def test_difference_of_solutions_is_second_order():
    r, T, mu0 = 0.1, 8.0, np.array([0.6, 0.4])
    base = solve_finite_horizon(ASYM, r, mu0, T)
    lin = solve_linearized(ASYM, base, [1.0, -1.0])
    eps = np.array([0.04, 0.02, 0.01, 0.005])
    err = []
    for e in eps:
        pert = solve_finite_horizon(ASYM, r, mu0 + e * np.array([1.0, -1.0]), T)
        err.append(max(np.abs(pert.u - base.u - e * lin.v).max(),
                       np.abs(pert.mu - base.mu - e * lin.m).max()))
    assert abs(loglog_slope(eps, np.array(err)) - 2.0) <= 0.2


def test_lipschitz_in_center():
    r, T = 0.1, 8.0
    m0 = [0.3, -0.3]
    base = solve_linearized(ASYM, solve_finite_horizon(ASYM, r, [0.6, 0.4], T), m0)
    diffs = []
    hs = [0.02, 0.01, 0.005]
    for h in hs:
        other = solve_linearized(ASYM, solve_finite_horizon(ASYM, r, [0.6 + h, 0.4 - h], T), m0)
        diffs.append(np.abs(other.v - base.v).max() + np.abs(other.m - base.m).max())
    q = np.array(diffs) / np.array(hs)
    assert q.max() <= 1.5 * q.min()


def test_derivative_matches_finite_difference():
    eta = np.array([0.4, 0.6])
    T = 20.0
    D = derivative_field(ASYM, 0.1, eta, horizon=T)
    assert np.abs(D[:, 0]).max() == 0.0
    h = 1e-4
    up = solve_discounted(ASYM, 0.1, eta + h * e_dir(0, 1, 2), horizon=T).u[0]
    dn = solve_discounted(ASYM, 0.1, eta - h * e_dir(0, 1, 2), horizon=T).u[0]
    np.testing.assert_allclose(D[:, 1], (up - dn) / (2 * h), atol=1e-7)
