import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from math import comb

from finite_mfg.core import (
    BoundaryError,
    SimplexError,
    as_simplex_point,
    as_tangent_vector,
    center,
    delta,
    delta_norm,
    directional_derivative_fd,
    e_dir,
    lattice,
    lattice_size,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_delta_examples():
    np.testing.assert_array_equal(delta(0, [1, 3]), [0, 2])
    np.testing.assert_array_equal(delta(1, [1, 3]), [-2, 0])
    assert delta_norm([1, 3]) == pytest.approx(np.sqrt(8))
    assert delta_norm([1, 3]) == pytest.approx(np.sqrt(2 * 2) * np.linalg.norm(np.array([1, 3]) - 2))


def test_delta_index_error():
    with pytest.raises(IndexError):
        delta(2, [1, 3])


def test_center_examples():
    np.testing.assert_array_equal(center([1, 3]), [2, 2])
    np.testing.assert_array_equal(center([0, 0, 0]), [0, 0, 0])
    assert center([1, 3]) @ np.array([1, -1]) == 0


def test_lattice_examples():
    np.testing.assert_allclose(lattice(2, 2), [[0, 1], [0.5, 0.5], [1, 0]])
    assert len(lattice(3, 2)) == 6
    np.testing.assert_allclose(lattice(2, 1), [[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        lattice(1, 3)
    with pytest.raises(ValueError):
        lattice(3, 0)


@pytest.mark.parametrize("d", range(2, 7))
@pytest.mark.parametrize("n", range(1, 11))
def test_lattice_count(d, n):
    P = lattice(d, n)
    assert len(P) == comb(n + d - 1, d - 1) == lattice_size(d, n)
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_simplex_validation():
    with pytest.raises(SimplexError):
        as_simplex_point([0.6, 0.6])
    with pytest.raises(SimplexError):
        as_simplex_point([1.1, -0.1])
    np.testing.assert_allclose(as_simplex_point([2, 2], renormalize=True), [0.5, 0.5])
    with pytest.raises(ValueError):
        as_tangent_vector([1, 1])


def test_fd_examples():
    # mass moves from state 2 to state 1 (0-based: 1 -> 0)
    K = lambda eta: eta[0]
    assert directional_derivative_fd(K, np.array([0.5, 0.5]), 1, 0, 1e-3) == pytest.approx(1.0)
    const = lambda eta: 3.0
    for y in range(3):
        for z in range(3):
            if y != z:
                assert directional_derivative_fd(const, np.full(3, 1 / 3), y, z, 1e-3) == 0.0


def test_fd_boundary():
    K = lambda eta: eta[0]
    # only the forward step is feasible at a vertex
    assert directional_derivative_fd(K, np.array([1.0, 0.0]), 0, 1, 1e-3) == pytest.approx(-1.0)
    with pytest.raises(BoundaryError):
        directional_derivative_fd(K, np.array([0.0, 0.0, 1.0]), 0, 1, 1e-3)


@given(arrays(float, st.integers(2, 6), elements=finite))
def test_delta_norm_identity(b):
    d = b.size
    assert delta_norm(b) == pytest.approx(np.sqrt(2 * d) * np.linalg.norm(b - center(b)), abs=1e-10)


@given(arrays(float, st.integers(2, 6), elements=finite), finite, st.data())
def test_delta_shift_invariant(b, c, data):
    x = data.draw(st.integers(0, b.size - 1))
    np.testing.assert_allclose(delta(x, b + c), delta(x, b), atol=1e-9)


@given(st.integers(2, 4), st.integers(2, 6), st.data())
def test_fd_linear_field_exact(d, n, data):
    P = lattice(d, n)
    eta = P[data.draw(st.integers(0, len(P) - 1))]
    w = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=d, max_size=d)))
    y, z = data.draw(st.permutations(range(d)))[:2]
    h = 1.0 / n
    if eta[y] < h and eta[z] < h:
        return
    val = directional_derivative_fd(lambda e: w @ e, eta, y, z, h)
    assert val == pytest.approx(w @ e_dir(y, z, d), abs=1e-12)
