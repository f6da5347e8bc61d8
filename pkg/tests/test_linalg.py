from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from koopreps import linalg
from koopreps.errors import ArgumentError, NumericalError

from conftest import random_orthogonal


def test_svd_identity_and_diagonal():
    assert np.allclose(linalg.svd(np.eye(3)).s, [1, 1, 1])
    res = linalg.svd(np.diag([3.0, 2.0, 1.0]))
    assert np.allclose(res.s, [3, 2, 1])
    assert np.allclose(res.u, np.eye(3))
    assert np.allclose(res.vt, np.eye(3))


def test_svd_reconstruction_and_orthonormality(rng):
    a = rng.standard_normal((10, 4))
    res = linalg.svd(a)
    assert res.u.shape == (10, 4) and res.vt.shape == (4, 4)
    assert np.linalg.norm(res.u * res.s @ res.vt - a) <= 1e-10
    assert np.linalg.norm(res.u.T @ res.u - np.eye(4)) <= 1e-8
    assert np.linalg.norm(res.vt @ res.vt.T - np.eye(4)) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_svd_values_sorted_nonnegative(rows, cols, seed):
    a = np.random.default_rng(seed).standard_normal((rows, cols))
    s = linalg.svd(a).s
    assert np.all(s >= 0)
    assert np.all(np.diff(s) <= 0)


def test_svd_rejects_non_finite():
    with pytest.raises(ArgumentError):
        linalg.svd(np.array([[np.nan, 1.0]]))


def test_procrustes_identity(rng):
    x = rng.standard_normal((20, 5))
    assert np.allclose(linalg.procrustes_rotation(x, x), np.eye(5), atol=1e-10)


def test_procrustes_recovers_rotation(rng):
    x = rng.standard_normal((30, 6))
    r0 = random_orthogonal(rng, 6)
    y = x @ r0.T
    r = linalg.procrustes_rotation(x, y)
    assert np.linalg.norm(y @ r - x) <= 1e-8


def test_procrustes_orthogonal_with_zero_column(rng):
    x = rng.standard_normal((15, 4))
    x[:, 2] = 0.0
    y = x @ random_orthogonal(rng, 4)
    r = linalg.procrustes_rotation(x, y)
    assert np.linalg.norm(r.T @ r - np.eye(4)) <= 1e-10


def test_procrustes_shape_mismatch():
    with pytest.raises(ArgumentError):
        linalg.procrustes_rotation(np.ones((3, 2)), np.ones((3, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_procrustes_always_orthogonal(q, seed):
    g = np.random.default_rng(seed)
    r = linalg.procrustes_rotation(g.standard_normal((10, q)), g.standard_normal((10, q)))
    assert np.linalg.norm(r.T @ r - np.eye(q)) <= 1e-10


def test_matrix_exp_examples():
    assert np.array_equal(linalg.matrix_exp(np.zeros((3, 3))), np.eye(3))
    assert np.allclose(linalg.matrix_exp(np.diag([0.5, -2.0])), np.diag(np.exp([0.5, -2.0])),
                       rtol=1e-14)
    assert np.allclose(linalg.matrix_exp(np.array([[0.0, 1.0], [0.0, 0.0]])),
                       [[1.0, 1.0], [0.0, 1.0]], atol=1e-15)


def test_matrix_exp_non_square():
    with pytest.raises(ArgumentError):
        linalg.matrix_exp(np.ones((2, 3)))


@pytest.mark.parametrize("scale", [0.01, 1.0, 5.0, 30.0])
def test_matrix_exp_matches_scipy(rng, scale):
    g = rng.standard_normal((8, 8)) * scale / np.sqrt(8)
    ref = scipy.linalg.expm(g)
    assert np.linalg.norm(linalg.matrix_exp(g) - ref) <= 1e-11 * max(1.0, np.linalg.norm(ref))


def _bounded_generator(seed: int, bound: float = 2.0) -> np.ndarray:
    g = np.random.default_rng(seed).standard_normal((8, 8))
    return g * (bound * np.random.default_rng(seed + 1).uniform(0.05, 1.0) / np.linalg.norm(g))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 2, 5, 10]))
def test_semigroup(seed, k):
    g = _bounded_generator(seed)
    lhs = linalg.matrix_power(linalg.matrix_exp(g / k), k)
    assert np.linalg.norm(lhs - linalg.matrix_exp(g)) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_inverse_by_negation(seed):
    g = _bounded_generator(seed)
    assert np.linalg.norm(linalg.matrix_exp(g) @ linalg.matrix_exp(-g) - np.eye(8)) <= 1e-8


def test_matrix_exp_gradient_matches_finite_differences(rng):
    g = rng.standard_normal((5, 5)) * 0.4
    w = rng.standard_normal((5, 5))
    grad = linalg.matrix_exp_grad(g, w)
    h = 1e-5
    for _ in range(15):
        i, j = rng.integers(0, 5, size=2)
        e = np.zeros_like(g)
        e[i, j] = h
        fd = (np.sum(w * linalg.matrix_exp(g + e)) - np.sum(w * linalg.matrix_exp(g - e))) / (2 * h)
        assert abs(fd - grad[i, j]) <= 1e-4 * max(1.0, abs(fd))


def test_solve_spd_examples(rng):
    b = rng.standard_normal((4, 3))
    assert np.allclose(linalg.solve_spd(np.eye(4), b, 0.0), b)
    assert np.allclose(linalg.solve_spd(2 * np.eye(4), np.ones(4), 0.0), 0.5 * np.ones(4))
    m = rng.standard_normal((6, 6))
    a = m.T @ m + np.eye(6)
    b = rng.standard_normal(6)
    assert np.linalg.norm(a @ linalg.solve_spd(a, b) - b) <= 1e-8


def test_solve_spd_failure_suggests_ridge():
    with pytest.raises(NumericalError, match="ridge"):
        linalg.solve_spd(np.diag([1.0, -1.0]), np.ones(2), 0.0)


def test_solve_spd_rejects_asymmetric():
    with pytest.raises(ArgumentError):
        linalg.solve_spd(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2))
