import itertools

import numpy as np
import pytest
from scipy import stats

from latent_critic import lds
from latent_critic.critic import ks_test, pearson_test, AggregatedSample
from latent_critic.dists import Normal
from latent_critic.lds import SLDSModel, SLDSState
from latent_critic.numerics import RngStream


def _state(S=1, p=1, d=1, n=2, A=0.0, Q=1.0, B=1.0, R=1.0, pi=None, s=None):
    return SLDSState(
        s=np.zeros(n, dtype=np.intp) if s is None else np.asarray(s, dtype=np.intp),
        Z=np.zeros((p, n)),
        A=np.broadcast_to(np.asarray(A, float), (S, p, p)).copy(),
        Q=np.broadcast_to(np.asarray(Q, float), (S, p)).copy(),
        B=np.broadcast_to(np.asarray(B, float), (d, p)).copy(),
        R=np.broadcast_to(np.asarray(R, float), (d,)).copy(),
        pi=np.full((S, S), 1.0 / S) if pi is None else np.asarray(pi, float),
    )


def test_model_validation():
    with pytest.raises(ValueError):
        SLDSModel(S=0, p=1, d=1)
    with pytest.raises(ValueError):
        SLDSModel(S=1, p=1, d=1, alpha=-1.0)


def test_simulate_marginal_variance():
    model = SLDSModel(S=1, p=2, d=2)
    _, X = lds.slds_simulate(model, 10_000, RngStream(0), A=np.zeros((1, 2, 2)), B=np.eye(2),
                             Q=np.ones((1, 2)), R=np.ones(2))
    assert np.allclose(X.var(axis=1), 2.0, atol=0.05)


def test_simulate_limits():
    model = SLDSModel(S=2, p=2, d=2)
    st, _ = lds.slds_simulate(model, 50, RngStream(1), A=np.stack([np.eye(2)] * 2), Q=np.full((2, 2), 1e16),
                              pi=np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert np.all(st.s == 0)
    assert np.allclose(st.Z, st.Z[:, :1], atol=1e-6)


def test_ffbs_conjugate_normal():
    model = SLDSModel(S=1, p=1, d=1)
    st = _state(n=5)
    X = np.array([[1.0, -2.0, 0.5, 3.0, 0.0]])
    draws = np.array([lds.slds_ffbs_latents(model, st, X, RngStream(2).child(i))[0] for i in range(10_000)])
    assert np.allclose(draws.mean(0), X[0] / 2, atol=0.02)
    assert np.allclose(draws.var(0), 0.5, atol=0.03)


def test_ffbs_two_step_exact_conditional():
    model = SLDSModel(S=1, p=1, d=1)
    a, q, r = 0.8, 2.0, 3.0
    st = _state(n=2, A=a, Q=q, R=r)
    X = np.array([[0.7, -0.4]])
    # joint prior of (z0, z1) and Gaussian conditioning on x
    cz = np.array([[1.0, a], [a, a * a + 1 / q]])
    cx = cz + np.eye(2) / r
    gain = cz @ np.linalg.inv(cx)
    mean = gain @ X[0]
    cov = cz - gain @ cz
    draws = np.array([lds.slds_ffbs_latents(model, st, X, RngStream(3).child(i))[0] for i in range(10_000)])
    se = np.sqrt(np.diag(cov) / 10_000)
    assert np.all(np.abs(draws.mean(0) - mean) < 3 * se + 1e-12)
    assert np.allclose(np.cov(draws.T), cov, atol=0.03)


def test_ffbs_noiseless_observation():
    model = SLDSModel(S=1, p=2, d=2)
    B = np.array([[1.0, 0.5], [-0.3, 2.0]])
    st = _state(p=2, d=2, n=4, A=0.5 * np.eye(2), Q=1.0, B=B, R=1e12)
    X = np.random.default_rng(4).standard_normal((2, 4))
    z = lds.slds_ffbs_latents(model, st, X, RngStream(5))
    assert np.allclose(z, np.linalg.solve(B, X), atol=1e-4)


def _path_probs(st, n):
    S = st.A.shape[0]
    ll = lds.transition_loglik(st)
    out = {}
    for tail in itertools.product(range(S), repeat=n - 1):
        path = (0,) + tail
        out[path] = np.exp(sum(np.log(st.pi[path[t - 1], path[t]]) + ll[t, path[t]] for t in range(1, n)))
    z = sum(out.values())
    return {k: v / z for k, v in out.items()}


def _empirical_paths(model, st, reps, seed):
    counts = {}
    for i in range(reps):
        path = tuple(lds.slds_sample_regimes(model, st, rng=RngStream(seed).child(i)))
        counts[path] = counts.get(path, 0) + 1
    return {k: v / reps for k, v in counts.items()}


@pytest.mark.parametrize("uniform", [True, False])
def test_regime_sampler_matches_enumeration(uniform):
    model = SLDSModel(S=2, p=1, d=1)
    pi = np.array([[0.7, 0.3], [0.4, 0.6]])
    A = [[[0.5]], [[0.5]]] if uniform else [[[0.9]], [[-0.9]]]
    st = _state(S=2, n=3, A=np.array(A), Q=2.0, pi=pi)
    st.Z = np.array([[1.0, 0.8, -0.5]])
    exact = _path_probs(st, 3)
    if uniform:
        prior = {(0, a, b): pi[0, a] * pi[a, b] for a in range(2) for b in range(2)}
        assert all(abs(exact[k] - prior[k]) < 1e-12 for k in prior)
    emp = _empirical_paths(model, st, 20_000, 6)
    tv = 0.5 * sum(abs(emp.get(k, 0.0) - v) for k, v in exact.items())
    assert tv < 0.02   # Monte Carlo tolerance for 20k draws over 4 paths


def test_single_regime_is_noop():
    model = SLDSModel(S=1, p=1, d=1)
    st = _state(n=7)
    assert np.array_equal(lds.slds_sample_regimes(model, st), np.zeros(7))


def test_regime_recovery_with_disjoint_dynamics():
    model = SLDSModel(S=2, p=2, d=2)
    pi = np.array([[0.98, 0.02], [0.02, 0.98]])
    A = np.stack([0.9 * np.eye(2), -0.9 * np.eye(2)])
    truth, _ = lds.slds_simulate(model, 500, RngStream(7), A=A, Q=np.full((2, 2), 25.0), B=np.eye(2),
                                 R=np.ones(2), pi=pi)
    path = lds.slds_sample_regimes(model, truth, rng=RngStream(8))
    assert path[0] == 0
    assert np.mean(path == truth.s) >= 0.95


def test_param_update_conjugate_pieces():
    model = SLDSModel(S=2, p=1, d=1, alpha=2.0, beta=3.0)
    st = _state(S=2, n=6, A=0.0)
    st.Z = np.array([[0.5, -0.2, 0.1, 0.3, 0.0, 1.0]])
    X = st.Z + 0.3
    a, b = lds.conditional_R(model, st, X)
    assert a == pytest.approx(2.0 + 3.0) and b[0] == pytest.approx(3.0 + 0.5 * 6 * 0.09)
    # regime 1 never visited: its transition row is a Dir(1) draw and A,Q come from the prior
    draws = np.array([lds.slds_update_params(model, st, X, RngStream(9).child(i)).pi[1, 0] for i in range(3000)])
    assert stats.kstest(draws, "uniform").pvalue > 0.001
    # tau_A with all-zero A: Gamma(alpha + S p^2 / 2, beta)
    taus = np.array([lds.slds_update_params(model, st, X, RngStream(10).child(i), skip=("A",)).tau_A
                     for i in range(3000)])
    assert stats.kstest(taus, stats.gamma(2.0 + 1.0, scale=1 / 3.0).cdf).pvalue > 0.001


def test_R_conditional_matches_grid():
    model = SLDSModel(S=1, p=1, d=1, alpha=2.0, beta=1.0)
    st = _state(n=4)
    st.Z = np.array([[0.3, -1.0, 0.2, 0.5]])
    X = np.array([[0.1, -0.4, 0.9, 0.2]])
    a, b = lds.conditional_R(model, st, X)
    grid = np.linspace(1e-4, 20, 40001)
    r = X - st.Z
    logp = stats.gamma.logpdf(grid, 2.0, scale=1.0) + np.sum(stats.norm.logpdf(r[0][:, None], 0, 1 / np.sqrt(grid)), 0)
    w = np.exp(logp - logp.max())
    dx = grid[1] - grid[0]
    w /= w.sum() * dx
    tv = 0.5 * np.sum(np.abs(w - stats.gamma.pdf(grid, a, scale=1 / b[0]))) * dx
    assert tv < 1e-3


def test_residuals_recover_generating_noise():
    model = SLDSModel(S=2, p=3, d=2, alpha=2.0, beta=2.0)
    A = 0.3 * RngStream(3).normal((2, 3, 3))
    truth, X = lds.slds_simulate(model, 50, RngStream(11), A=A)
    e = RngStream(11).child(8).normal((3, 50))
    assert np.allclose(lds.slds_latent_residuals(truth), e[:, 1:], atol=1e-10)
    inn = lds.slds_innovations(truth, X)
    noise = RngStream(11).child(9).normal((2, 50))
    assert np.allclose(inn, noise[:, 1:], atol=1e-10)


def test_residual_formula_reductions():
    st = _state(p=2, d=2, n=5, A=0.0, Q=1.0, B=np.eye(2), R=1.0)
    st.Z = np.random.default_rng(12).standard_normal((2, 5))
    assert np.array_equal(lds.slds_latent_residuals(st), st.Z[:, 1:])
    assert np.array_equal(lds.slds_innovations(st, st.Z), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        lds.slds_latent_residuals(_state(n=1))
    with pytest.raises(ValueError):
        lds.slds_innovations(_state(n=1), np.zeros((1, 1)))


def test_pair_counts_and_errors():
    res = np.arange(2.0).reshape(1, 2)
    assert lds.slds_aggregate_pairs(res, "lag1").size == 1
    res = np.random.default_rng(13).standard_normal((4, 608))
    assert lds.slds_aggregate_pairs(res, "lag1").size == 607 * 4
    assert lds.slds_aggregate_pairs(res, "cross-dim").size == 608 * 6
    with pytest.raises(ValueError):
        lds.slds_aggregate_pairs(res, "diagonal")
    with pytest.raises(ValueError):
        lds.slds_aggregate_pairs(res[:1], "cross-dim")


def test_white_noise_pairs_null():
    ps = [pearson_test(lds.slds_aggregate_pairs(RngStream(14).child(i).normal((4, 100)), "lag1")).p_value
          for i in range(300)]
    assert stats.kstest(ps, "uniform").pvalue > 0.01


def test_best_permutation_accuracy():
    assert lds.best_permutation_accuracy([0, 0, 1, 1, 2], [2, 2, 0, 0, 1]) == 1.0
    assert lds.best_permutation_accuracy([0, 1, 1, 1], [0, 0, 0, 0]) == 0.75


def test_posterior_sample_reproducible_and_valid():
    model = SLDSModel(S=2, p=2, d=2, alpha=2.0, beta=2.0)
    _, X = lds.slds_simulate(model, 60, RngStream(15))
    a = lds.slds_posterior_sample(model, X, 10, RngStream(16))
    b = lds.slds_posterior_sample(model, X, 10, RngStream(16))
    assert np.array_equal(a.Z, b.Z) and np.array_equal(a.s, b.s)
    assert a.s[0] == 0 and np.all(a.Q > 0) and np.all(a.R > 0)
    assert np.allclose(a.pi.sum(1), 1.0)
    with pytest.raises(ValueError):
        lds.slds_posterior_sample(model, X, 0)


@pytest.mark.slow
def test_single_regime_calibration():
    model = SLDSModel(S=1, p=2, d=2, alpha=2.0, beta=2.0, ab_A=(10.0, 1.0))
    ps = []
    for r in range(40):
        g = RngStream(600).child(r)
        _, X = lds.slds_simulate(model, 100, g.child(0))
        st = lds.slds_posterior_sample(model, X, 200, g.child(1))
        ps.append(ks_test(AggregatedSample(lds.slds_latent_residuals(st).ravel(), Normal())).p_value)
    assert stats.kstest(ps, "uniform").pvalue > 0.01


@pytest.mark.slow
def test_three_regime_segmentation():
    model = SLDSModel(S=3, p=4, d=4)
    params = lds.regime_benchmark(rng=RngStream(17))
    truth, X = lds.slds_simulate(model, 600, RngStream(18), **params)
    st = lds.slds_posterior_sample(model, X, 2000, RngStream(19))
    assert lds.best_permutation_accuracy(truth.s, st.s, 3) >= 0.8
