import csv

import numpy as np
import pytest

from conftest import ASYM, FREE, SYM
from finite_mfg.master import (
    MasterField,
    build_discounted_field,
    cached_field,
    evaluate_Ur,
    grad_Ur,
    master_horizon,
    monotonicity_check,
    residual,
    solve_ergodic_master,
)
from finite_mfg.mfg_solver import solve_discounted, solve_ergodic, solve_stationary_discounted


def test_free_model_field_is_zero():
    f = build_discounted_field(FREE, 0.1, 5)
    assert np.abs(f.values).max() <= 1e-14
    assert np.abs(f.gradients).max() == 0.0
    assert np.abs(f.residuals()).max() <= 1e-14


def test_value_at_stationary_law():
    stat = solve_stationary_discounted(ASYM, 0.1, 1e-13)
    np.testing.assert_allclose(evaluate_Ur(ASYM, 0.1, stat.measure), stat.value, atol=1e-9)


@pytest.mark.parametrize("r", [0.1, 0.05])
def test_symmetric_value_at_center(r):
    np.testing.assert_allclose(evaluate_Ur(SYM, r, [0.5, 0.5]), SYM.beta / (2 * r), atol=1e-8)


def test_flow_invariance():
    r = 0.1
    T = master_horizon(ASYM, r)
    flow = solve_discounted(ASYM, r, [0.9, 0.1], horizon=T)
    for t in (1.0, 3.0):
        k = int(round(t / flow.dt))
        np.testing.assert_allclose(evaluate_Ur(ASYM, r, flow.mu[k]), flow.u[k], atol=1e-6)


def test_residuals_small_and_one_point():
    f = cached_field(ASYM, 0.1, 20)
    res = np.abs(f.residuals())
    assert res.max() <= 1e-5
    i = f.index([0.5, 0.5])
    assert abs(residual(ASYM, f, [0.5, 0.5], 0)) == pytest.approx(res[i, 0])
    with pytest.raises(KeyError):
        f.index([0.51, 0.49])


def test_residual_detects_wrong_field():
    f = cached_field(ASYM, 0.1, 20)
    bad = MasterField(ASYM, 0.1, f.points, f.values + 0.1, f.gradients)
    assert np.abs(bad.residuals()).min() >= 0.1 * 0.1 - 1e-6


def test_monotonicity():
    f = cached_field(ASYM, 0.1, 20)
    assert monotonicity_check(f) >= -1e-10
    single = MasterField(ASYM, 0.1, f.points[:1], f.values[:1], f.gradients[:1])
    assert monotonicity_check(single) == 0.0


def test_gradient_bound_and_lipschitz():
    fields = [cached_field(ASYM, r, 20) for r in (0.1, 0.05)]
    g = [np.abs(f.gradients).max() for f in fields]
    # the gradient stays bounded as the discount shrinks
    assert g[1] <= 1.5 * g[0]
    L = [f.grad_lipschitz() for f in fields]
    assert 0.5 * L[0] <= L[1] <= 1.5 * L[0]


def test_grad_matches_field():
    f = cached_field(ASYM, 0.1, 20)
    i = f.index([0.3, 0.7])
    np.testing.assert_allclose(grad_Ur(ASYM, 0.1, [0.3, 0.7]), f.gradients[i], atol=1e-12)


def test_r_range_checked():
    with pytest.raises(ValueError):
        evaluate_Ur(ASYM, 0.0, [0.5, 0.5])
    with pytest.raises(ValueError):
        grad_Ur(ASYM, 0.9, [0.5, 0.5])


def test_ergodic_master_symmetric():
    f = solve_ergodic_master(SYM, 10)
    assert f.rho == pytest.approx(0.5, abs=1e-6)
    assert np.abs(f.residuals()).max() <= 1e-3


def test_ergodic_master_asym():
    f = solve_ergodic_master(ASYM, 20)
    erg = solve_ergodic(ASYM)
    assert abs(f.rho - erg.rho) <= 1e-4
    assert abs(f.info["rho_ladder"] - erg.rho) <= 1e-3
    assert np.abs(f.residuals()).max() <= 1e-3
    u0 = f.info["u0_at_mu"]
    assert np.abs((u0 - u0.mean()) - erg.value).max() <= 1e-5


def test_master_csv(tmp_path):
    f = build_discounted_field(SYM, 0.1, 4)
    f.to_csv(tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["eta_1", "eta_2", "x", "U", "dU_1", "dU_2", "residual"]
    assert len(rows) == 1 + 5 * 2
    assert {r[2] for r in rows[1:]} == {"1", "2"}
    s = f.summary()
    assert s["lattice_points"] == 5
