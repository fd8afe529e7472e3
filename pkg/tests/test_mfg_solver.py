import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq, minimize_scalar

from conftest import ASYM, D3, FREE, SYM
from finite_mfg.markov import stationary_distribution
from finite_mfg.mfg_solver import (
    bellman_operator,
    duality_margin,
    solve_discounted,
    solve_ergodic,
    solve_finite_horizon,
    solve_stationary_discounted,
    stationary_residual,
    turnpike_fit,
    vanishing_discount_ladder,
)
from finite_mfg.model import ModelSpec, rate_matrix


def two_state_free_law(mu0, t, kappa=1.0):
    """Law of the symmetric two-state chain with rate kappa."""
    return 0.5 + (mu0[0] - 0.5) * np.exp(-2 * kappa * t)


def brute_ergodic_2(spec):
    """Independent oracle for d = 2: scalar root in p = u_2 - u_1.

    The Hamiltonian is minimized numerically on each side; the population
    is the explicit two-state stationary law of the optimal rates.
    """
    def h(p):
        res = minimize_scalar(lambda a: a * p + 0.5 * spec.c * (a - spec.kappa) ** 2,
                              bounds=(spec.a_l, spec.a_u), method="bounded",
                              options={"xatol": 1e-12})
        return res.fun, res.x

    def parts(p):
        h0, a0 = h(p)
        h1, a1 = h(-p)
        mu = np.array([a1, a0]) / (a0 + a1)
        F = spec.beta * mu + spec.g_array
        return h0 + F[0], h1 + F[1], mu

    p = brentq(lambda p: parts(p)[0] - parts(p)[1], -5, 5, xtol=1e-13)
    rho, _, mu = parts(p)
    return rho, np.array([-p / 2, p / 2]), mu


# -- finite horizon --------------------------------------------------------


def test_free_finite_horizon_closed_form():
    mu0 = [0.9, 0.1]
    flow = solve_finite_horizon(FREE, 0.1, mu0, 5.0)
    assert np.abs(flow.u).max() <= 1e-14
    exact = two_state_free_law(mu0, flow.t)
    assert np.abs(flow.mu[:, 0] - exact).max() <= 1e-6


def test_terminal_condition_and_mass():
    flow = solve_finite_horizon(D3, 0.2, [0.7, 0.2, 0.1], 4.0)
    assert np.abs(flow.u[-1]).max() == 0.0
    assert np.abs(flow.mu.sum(axis=1) - 1).max() <= 1e-12
    assert flow.mu.min() >= 0
    hjb, kfe = flow.residuals(D3)
    assert max(hjb, kfe) <= 1e-10


def test_finite_horizon_duality():
    a = solve_finite_horizon(ASYM, 0.1, [0.9, 0.1], 5.0)
    b = solve_finite_horizon(ASYM, 0.1, [0.2, 0.8], 5.0)
    assert duality_margin(ASYM, a, b) >= -1e-8
    assert duality_margin(ASYM, a, a) == pytest.approx(0.0, abs=1e-15)


def test_finite_horizon_validation():
    with pytest.raises(ValueError):
        solve_finite_horizon(SYM, 0.1, [0.5, 0.5], 0.0)
    with pytest.raises(ValueError):
        solve_finite_horizon(SYM, 0.1, [0.3, 0.3, 0.4], 1.0)


# -- stationary discounted -------------------------------------------------


@pytest.mark.parametrize("r", [0.5, 0.1, 0.01])
def test_symmetric_stationary_closed_form(r):
    sol = solve_stationary_discounted(SYM, r)
    np.testing.assert_allclose(sol.value, SYM.beta / (2 * r), atol=1e-8)
    np.testing.assert_allclose(sol.measure, 0.5, atol=1e-12)


@pytest.mark.parametrize("spec", [ASYM, D3, ModelSpec(d=3, g=(0.0, 1.5, 3.0), beta=0.5)])
def test_stationary_measure_lower_bound(spec):
    sol = solve_stationary_discounted(spec, 0.05)
    A = spec.a_l / ((spec.d - 1) * spec.a_u)
    assert sol.measure.min() >= A / (1 + A) - 1e-12
    assert stationary_residual(spec, 0.05, sol.value, sol.measure) <= 1e-9


def test_lower_bound_value_for_defaults():
    A = 0.1 / 2.0
    assert A / (1 + A) == pytest.approx(0.047619, abs=1e-6)


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.floats(0.01, 0.99))
def test_bellman_contraction(vals, m):
    r = 0.2
    u, w = np.array(vals[:2]), np.array(vals[2:])
    mu = np.array([m, 1 - m])
    Su = bellman_operator(ASYM, r, mu, u)
    Sw = bellman_operator(ASYM, r, mu, w)
    exit_max = ASYM.max_exit_rate
    lam = exit_max / (exit_max + r)
    assert np.abs(Su - Sw).max() <= lam * np.abs(u - w).max() + 1e-9


def test_bellman_fixed_point():
    sol = solve_stationary_discounted(ASYM, 0.1)
    np.testing.assert_allclose(bellman_operator(ASYM, 0.1, sol.measure, sol.value), sol.value,
                               atol=1e-9)


def test_stationary_rejects_zero_discount():
    with pytest.raises(ValueError):
        solve_stationary_discounted(SYM, 0.0)


# -- infinite horizon ------------------------------------------------------


def test_constant_flow_from_stationary_law():
    stat = solve_stationary_discounted(ASYM, 0.1, 1e-13)
    flow = solve_discounted(ASYM, 0.1, stat.measure)
    assert np.abs(flow.mu - stat.measure).max() <= 1e-9
    assert np.abs(flow.u - stat.value).max() <= 1e-8


def test_turnpike_decay_fit():
    flow = solve_discounted(ASYM, 0.1, [0.95, 0.05])
    stat = solve_stationary_discounted(ASYM, 0.1, 1e-13)
    fit = turnpike_fit(flow, stat.measure)
    assert fit.rate > 0
    assert fit.r2 >= 0.99
    assert flow.info["decay_rate"] == pytest.approx(fit.rate)


def test_discounted_flow_mass_and_residuals():
    flow = solve_discounted(D3, 0.1, [0.6, 0.3, 0.1])
    assert np.abs(flow.mu.sum(axis=1) - 1).max() <= 1e-12
    assert max(flow.residuals(D3)) <= 1e-9


def test_flow_csv(tmp_path):
    flow = solve_finite_horizon(SYM, 0.1, [0.9, 0.1], 1.0)
    flow.to_csv(tmp_path / "f.csv")
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["t", "u_1", "u_2", "mu_1", "mu_2"]
    assert len(rows) == len(flow.t) + 1
    # 17 significant digits round-trip every double exactly
    back = np.array([[float(v) for v in row] for row in rows[1:]])
    np.testing.assert_array_equal(back[:, 1:3], flow.u)
    np.testing.assert_array_equal(back[:, 3:], flow.mu)


# -- ergodic ---------------------------------------------------------------


def test_ergodic_symmetric():
    sol = solve_ergodic(SYM)
    assert sol.rho == pytest.approx(0.5, abs=1e-10)
    np.testing.assert_allclose(sol.value, 0.0, atol=1e-10)
    np.testing.assert_allclose(sol.measure, 0.5, atol=1e-10)
    assert not sol.flagged


def test_ergodic_asym_analytic():
    sol = solve_ergodic(ASYM)
    assert sol.rho == pytest.approx(0.645, abs=1e-10)
    np.testing.assert_allclose(sol.value, [-0.05, 0.05], atol=1e-10)
    np.testing.assert_allclose(sol.measure, [0.55, 0.45], atol=1e-10)


@pytest.mark.parametrize("spec", [ASYM, ModelSpec(g=(0.0, 3.0)), ModelSpec(g=(1.0, 0.0), beta=2.0, c=0.5)])
def test_ergodic_against_brute_oracle(spec):
    rho, u, mu = brute_ergodic_2(spec)
    sol = solve_ergodic(spec)
    assert abs(sol.rho - rho) <= 1e-4
    assert np.abs(sol.value - u).max() <= 1e-4
    assert np.abs(sol.measure - mu).max() <= 1e-4


def test_ergodic_measure_is_stationary_law():
    sol = solve_ergodic(D3)
    pi = stationary_distribution(rate_matrix(D3, sol.value))
    assert np.abs(pi - sol.measure).max() <= 1e-10
    assert abs(sol.value.sum()) <= 1e-10  # normalization is one row of the Newton system


def test_vanishing_discount_sqrt_rate():
    rho = solve_ergodic(ASYM).rho
    rungs = vanishing_discount_ladder(ASYM, 0.1, 8, tol=0.0)
    rs = np.array([r for r, _ in rungs])
    err = np.abs(np.array([z[0] for _, z in rungs]) - rho)
    ratio = err / np.sqrt(rs)
    assert ratio[-1] <= ratio[0] + 1e-12
    assert ratio.max() <= 10 * ASYM.cost_bound


def test_discounted_value_bound():
    for spec in (SYM, ASYM, D3):
        for r in (0.5, 0.1, 0.01):
            sol = solve_stationary_discounted(spec, r)
            assert r * np.abs(sol.value).max() <= spec.cost_bound + 1e-9
