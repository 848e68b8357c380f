import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from latent_critic.numerics import (
    DimensionError,
    NumericalRankError,
    RngStream,
    cholesky,
    rng_draws,
    solve_spd,
    sym_eig,
)

from .conftest import random_spd


def test_sym_eig_identity():
    e = sym_eig(np.eye(3))
    assert np.allclose(e.eigenvalues, 1.0)
    assert np.allclose(e.eigenvectors.T @ e.eigenvectors, np.eye(3))


def test_sym_eig_2x2():
    e = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(e.eigenvalues, [3.0, 1.0], atol=1e-14)
    v = e.eigenvectors
    assert np.allclose(np.abs(v[:, 0]), [2**-0.5, 2**-0.5])
    assert np.isclose(abs(v[:, 1] @ np.array([1.0, -1.0])), np.sqrt(2.0))


def test_sym_eig_reconstruction_random_spd():
    m = random_spd(10, seed=3)
    e = sym_eig(m)
    assert np.max(np.abs(e.reconstruct() - m)) <= 1e-10 * np.max(np.abs(m))
    assert np.all(np.diff(e.eigenvalues) <= 0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 2**31 - 1))
def test_sym_eig_invariants(n, seed):
    a = np.random.default_rng(seed).standard_normal((n, n))
    m = a + a.T
    e = sym_eig(m)
    scale = max(np.max(np.abs(m)), 1e-300)
    assert np.max(np.abs(e.reconstruct() - m)) <= 1e-8 * scale
    assert np.max(np.abs(e.eigenvectors.T @ e.eigenvectors - np.eye(n))) <= 1e-8
    assert abs(e.eigenvalues.sum() - np.trace(m)) <= 1e-8 * max(1.0, np.abs(e.eigenvalues).sum())
    assert np.allclose(e.eigenvalues, np.linalg.eigvalsh(m)[::-1], atol=1e-9 * scale)


def test_sym_eig_rejects_bad_input():
    with pytest.raises(DimensionError):
        sym_eig(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_cholesky_small_cases():
    assert np.allclose(cholesky(np.eye(2)), np.eye(2))
    assert np.allclose(cholesky(np.array([[4.0, 2.0], [2.0, 5.0]])), [[2.0, 0.0], [1.0, 2.0]])


def test_cholesky_random_reconstruction():
    m = random_spd(20, seed=1, cond=1e4)
    L = cholesky(m)
    assert np.allclose(np.triu(L, 1), 0.0)
    assert np.max(np.abs(L @ L.T - m)) <= 1e-10 * np.max(np.abs(m))


def test_cholesky_reports_failing_pivot():
    m = np.diag([1.0, 2.0, -3.0])
    with pytest.raises(NumericalRankError) as err:
        cholesky(m)
    assert err.value.pivot == 2


def test_cholesky_jitter_rescues_duplicate_inputs():
    x = np.array([0.0, 0.0, 1.0])
    m = np.exp(-0.5 * (x[:, None] - x[None, :]) ** 2)   # rank 2
    m[1, 1] -= 1e-15
    L = cholesky(m)
    assert np.max(np.abs(L @ L.T - m)) < 1e-8


def test_cholesky_without_jitter_raises():
    with pytest.raises(NumericalRankError):
        cholesky(np.array([[1.0, 1.0], [1.0, 1.0 - 1e-13]]), jitter=False)


def test_solve_spd_cases():
    b = np.array([3.0, -1.0])
    assert np.allclose(solve_spd(np.eye(2), b), b)
    assert np.allclose(solve_spd(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])
    m = random_spd(15, seed=7, cond=1e3)
    b = np.random.default_rng(0).standard_normal(15)
    x = solve_spd(m, b)
    assert np.max(np.abs(m @ x - b)) <= 1e-8 * np.max(np.abs(b))


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_solve_spd_matches_inverse(n):
    m = random_spd(n, seed=n)
    b = np.arange(1.0, n + 1)
    assert np.allclose(solve_spd(m, b), np.linalg.inv(m) @ b, rtol=1e-10, atol=1e-12)


def test_solve_spd_dimension_mismatch():
    with pytest.raises(DimensionError):
        solve_spd(np.eye(3), np.ones(2))


def test_rng_draws_empty_and_deterministic():
    assert rng_draws(RngStream(1), 0).shape == (0,)
    a = rng_draws(RngStream(7, 3), 100)
    b = rng_draws(RngStream(7, 3), 100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rng_draws(RngStream(7, 4), 100))


def test_rng_draws_uniformity():
    u = rng_draws(RngStream(2024), 100_000)
    assert np.all((u > 0) & (u < 1))
    assert abs(u.mean() - 0.5) < 0.005
    assert stats.kstest(u, "uniform").pvalue > 0.001


def test_distinct_streams_uncorrelated():
    a = RngStream(5, 0).normal(20_000)
    b = RngStream(5, 1).normal(20_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.03


def test_child_streams_are_deterministic():
    s = RngStream(9)
    assert np.array_equal(s.child(4).uniform(5), RngStream(9).child(4).uniform(5))
    assert not np.array_equal(s.child(4).uniform(5), s.child(5).uniform(5))
