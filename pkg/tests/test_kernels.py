import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latent_critic import _backend, _kernels_py

from .conftest import _kernels_c, random_spd


def test_backend_selected():
    assert _backend.BACKEND in ("cython", "python")


@pytest.mark.parametrize("n", [1, 2, 5, 16, 33])
def test_jacobi_matches_lapack(backend, n):
    m = random_spd(n, seed=n) - 2.0 * np.eye(n)
    w, v, sweeps = backend.jacobi_eigh(m)
    order = np.argsort(w)
    assert np.allclose(w[order], np.linalg.eigvalsh(m), atol=1e-11)
    assert np.allclose(v.T @ v, np.eye(n), atol=1e-12)
    assert np.allclose((v * w) @ v.T, m, atol=1e-11)
    assert sweeps >= 1


def test_jacobi_diagonal_needs_no_rotation(backend):
    w, v, _ = backend.jacobi_eigh(np.diag([3.0, -1.0, 2.0]))
    assert np.array_equal(w, [3.0, -1.0, 2.0])
    assert np.array_equal(v, np.eye(3))


def _ks_oracle(x, f):
    n = x.size
    u = np.unique(x)
    emp_hi = np.searchsorted(x, u, side="right") / n
    emp_lo = np.searchsorted(x, u, side="left") / n
    fu = f[np.searchsorted(x, u, side="left")]
    return max(np.max(np.abs(emp_hi - fu)), np.max(np.abs(fu - emp_lo)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=40))
def test_ks_sup_with_ties(values):
    x = np.sort(np.asarray(values, dtype=float))
    f = 1.0 / (1.0 + np.exp(-x))
    for b in (_kernels_py, _kernels_c):
        if b is None:
            continue
        assert b.ks_sup(x, f) == pytest.approx(_ks_oracle(x, f), abs=1e-15)


def test_ks_sup_single_point(backend):
    assert backend.ks_sup(np.array([0.0]), np.array([0.5])) == pytest.approx(0.5)
    assert backend.ks_sup(np.zeros(0), np.zeros(0)) == 0.0


def _lds_problem(n=6, p=2, d=3, seed=0):
    g = np.random.default_rng(seed)
    a_seq = np.stack([np.array([[0.9, -0.2], [0.2, 0.9]]) + 0.05 * g.standard_normal((p, p)) for _ in range(n)])
    q = 0.3 + g.random((n, p))
    b = g.standard_normal((d, p))
    r = 0.5 + g.random(d)
    x = g.standard_normal((n, d))
    return a_seq, q, b, r, x


def _dense_posterior(a_seq, q, b, r, x):
    """E[z | x] and Cov[z | x] by forming the joint Gaussian explicitly."""
    n, p = q.shape
    # z = M w with w ~ N(0, blockdiag(I, diag q_1..q_{n-1}))
    m = np.zeros((n * p, n * p))
    for t in range(n):
        for s in range(t + 1):
            blk = np.eye(p)
            for u in range(s + 1, t + 1):
                blk = a_seq[u] @ blk
            m[t * p:(t + 1) * p, s * p:(s + 1) * p] = blk
    w = np.diag(np.r_[np.ones(p), q[1:].ravel()])
    cz = m @ w @ m.T
    bb = np.kron(np.eye(n), b)
    cx = bb @ cz @ bb.T + np.kron(np.eye(n), np.diag(r))
    gain = cz @ bb.T @ np.linalg.inv(cx)
    mean = gain @ x.ravel()
    cov = cz - gain @ bb @ cz
    return mean.reshape(n, p), cov


def test_kalman_ffbs_zero_noise_is_smoother_mean(backend):
    a_seq, q, b, r, x = _lds_problem()
    z = backend.kalman_ffbs(a_seq, q, b, r, x, np.zeros_like(q))
    mean, _ = _dense_posterior(a_seq, q, b, r, x)
    assert np.allclose(z, mean, atol=1e-10)


def test_kalman_ffbs_sample_covariance():
    a_seq, q, b, r, x = _lds_problem(n=4, seed=1)
    mean, cov = _dense_posterior(a_seq, q, b, r, x)
    g = np.random.default_rng(3)
    kern = _kernels_c or _kernels_py
    draws = np.array([kern.kalman_ffbs(a_seq, q, b, r, x, g.standard_normal(q.shape)).ravel()
                      for _ in range(20000)])
    sd = np.sqrt(np.diag(cov))
    assert np.all(np.abs(draws.mean(0) - mean.ravel()) < 5 * sd / np.sqrt(20000))
    assert np.allclose(np.diag(np.cov(draws.T)) / np.diag(cov), 1.0, atol=0.05)
    corr = np.corrcoef(draws.T)
    assert np.allclose(corr, cov / np.outer(sd, sd), atol=0.04)


@pytest.mark.skipif(_kernels_c is None, reason="extension not built")
def test_kalman_backends_agree():
    a_seq, q, b, r, x = _lds_problem(n=30, p=2, d=3, seed=4)
    eps = np.random.default_rng(0).standard_normal(q.shape)
    za = _kernels_py.kalman_ffbs(a_seq, q, b, r, x, eps)
    zb = _kernels_c.kalman_ffbs(a_seq, q, b, r, x, eps)
    assert np.allclose(za, zb, rtol=1e-9, atol=1e-10)


def _hmm_problem(n=4, S=2, seed=0):
    g = np.random.default_rng(seed)
    loglik = g.standard_normal((n, S))
    trans = g.dirichlet(np.ones(S) * 2, size=S)
    return loglik, trans


def test_hmm_ffbs_matches_enumeration():
    loglik, trans = _hmm_problem()
    n, S = loglik.shape
    weights = {}
    for tail in itertools.product(range(S), repeat=n - 1):
        path = (0,) + tail
        lp = sum(np.log(trans[path[t - 1], path[t]]) + loglik[t, path[t]] for t in range(1, n))
        weights[path] = np.exp(lp)
    z = sum(weights.values())
    g = np.random.default_rng(11)
    reps = 20000
    counts = dict.fromkeys(weights, 0)
    for _ in range(reps):
        counts[tuple(_kernels_py.hmm_ffbs(loglik, trans, 0, g.random(n)))] += 1
    for path, w in weights.items():
        prob = w / z
        assert abs(counts[path] / reps - prob) < 4 * np.sqrt(prob * (1 - prob) / reps) + 1e-3


@pytest.mark.skipif(_kernels_c is None, reason="extension not built")
def test_hmm_backends_agree():
    loglik, trans = _hmm_problem(n=200, S=3, seed=2)
    u = np.random.default_rng(5).random(200)
    assert np.array_equal(_kernels_py.hmm_ffbs(loglik, trans, 0, u), _kernels_c.hmm_ffbs(loglik, trans, 0, u))


def test_hmm_first_state_pinned(backend):
    loglik, trans = _hmm_problem(n=10, S=3)
    loglik[0] = [-1e6, 0.0, -1e6]
    path = backend.hmm_ffbs(loglik, trans, 0, np.full(10, 0.5))
    assert path[0] == 0


def test_env_var_forces_python_backend():
    import os
    import subprocess
    import sys
    env = dict(os.environ, LATENT_CRITIC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import latent_critic; print(latent_critic.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
