import numpy as np
import pytest
from scipy import integrate, stats

from latent_critic import fa
from latent_critic.dists import Laplace, Normal, ScaleMixtureNormal
from latent_critic.fa import DataError, FAModel, FAState
from latent_critic.numerics import RngStream


def _toy(latent_prior="gaussian", n=3, d=2, K=1, seed=0):
    model = FAModel(d=d, K=K, latent_prior=latent_prior, alpha=2.0, beta=2.0)
    st, X = fa.fa_simulate(model, n, RngStream(seed))
    return model, st, X


def _grid_tv(log_unnorm, density, grid):
    lp = np.array([log_unnorm(g) for g in grid])
    w = np.exp(lp - lp.max())
    dx = grid[1] - grid[0]
    w /= w.sum() * dx
    return 0.5 * np.sum(np.abs(w - density(grid))) * dx


def test_tau_conditional_matches_grid():
    model, st, X = _toy()
    cond = fa.cond_tau(model, st, X)
    r = X - st.theta @ st.Z - st.b[:, None]
    assert cond.alpha == pytest.approx(model.alpha + X.size / 2)
    assert cond.beta == pytest.approx(model.beta + 0.5 * np.sum(r * r))

    def lj(t):
        s = st.copy()
        s.tau = t
        return fa.fa_log_joint(model, s, X)

    grid = np.linspace(1e-4, cond.mean + 12 * np.sqrt(cond.var), 20001)
    assert _grid_tv(lj, lambda g: np.exp(cond.log_density(g)), grid) < 1e-3


def test_tau_conditional_vague_hyperparameters():
    model = FAModel(d=2, K=1, alpha=0.001, beta=0.001)
    st, X = fa.fa_simulate(model, 3, RngStream(1), tau=4.0)
    c = fa.cond_tau(model, st, X)
    s = np.sum((X - st.theta @ st.Z - st.b[:, None]) ** 2)
    assert (c.alpha, c.beta) == pytest.approx((0.001 + 3.0, 0.001 + s / 2))


def test_z_conditional_matches_grid():
    model, st, X = _toy()
    for i in range(3):
        cond = fa.cond_z(model, st, X, i)
        sd = 1 / np.sqrt(cond.precision[0, 0])

        def lj(z):
            s = st.copy()
            s.Z[0, i] = z
            return fa.fa_log_joint(model, s, X)

        grid = cond.mu[0] + sd * np.linspace(-10, 10, 8001)
        dens = lambda g: np.exp(Normal(cond.mu[0], cond.precision[0, 0]).log_density(g))
        assert _grid_tv(lj, dens, grid) < 1e-3


def test_theta_and_b_conditionals_match_grid():
    model, st, X = _toy(d=1)
    ct = fa.cond_theta_row(model, st, X, 0)
    cb = fa.cond_b(model, st, X)
    for cond, field in ((ct, "theta"), (cb, "b")):
        sd = 1 / np.sqrt(cond.precision[0, 0])

        def lj(v, field=field):
            s = st.copy()
            getattr(s, field).flat[0] = v
            return fa.fa_log_joint(model, s, X)

        grid = cond.mu[0] + sd * np.linspace(-10, 10, 8001)
        dens = lambda g, c=cond: np.exp(Normal(c.mu[0], c.precision[0, 0]).log_density(g))
        assert _grid_tv(lj, dens, grid) < 1e-3


def test_zero_loadings_leave_prior():
    model = FAModel(d=3, K=1, tau_z=1.0, theta_prior="hierarchical")
    st, X = fa.fa_simulate(model, 5, RngStream(2), theta=np.zeros((3, 1)))
    c = fa.cond_z(model, st, X, 0)
    assert c.mu[0] == 0.0 and c.precision[0, 0] == pytest.approx(st.tau_z)


def test_laplace_mixing_variance_conditional():
    # v | z, lambda has density propto N(z; 0, v) * Exp(v; lambda^2 / 2)
    model = FAModel(d=1, K=1, latent_prior="laplace")
    z, lam = 0.7, 1.3
    st = FAState(Z=np.full((1, 20000), z), theta=np.zeros((1, 1)), b=np.zeros(1), tau=1.0, tau_z=lam,
                 v=np.ones((1, 20000)))
    fa._update_latent_scale(model, st, RngStream(3), skip_scale=True)
    dens = lambda v: np.exp(-z * z / (2 * v) - lam * lam * v / 2) / np.sqrt(v)
    norm, _ = integrate.quad(dens, 0, np.inf)
    cdf = np.vectorize(lambda v: integrate.quad(dens, 0, v)[0] / norm)
    assert stats.kstest(st.v.ravel()[:3000], cdf).pvalue > 0.001


def test_simulate_noiseless_limit():
    model = FAModel(d=1, K=1, theta_prior="hierarchical")
    st, X = fa.fa_simulate(model, 50, RngStream(4), theta=np.ones((1, 1)), tau=1e8)
    assert np.allclose(X, st.Z + st.b[:, None], atol=1e-3)


def test_simulated_latents_follow_prior():
    model = FAModel(d=2, K=1, theta_prior="hierarchical", tau_z=2.0)
    st, _ = fa.fa_simulate(model, 10_000, RngStream(5))
    assert stats.kstest(st.Z.ravel(), Normal(0, 2.0).cdf).pvalue > 0.001
    mix = FAModel(d=2, K=1, latent_prior="scale-mixture", M=3)
    st, _ = fa.fa_simulate(mix, 10_000, RngStream(6), pi=np.array([1.0, 0.0, 0.0]), tau_m=np.array([1.0, 5.0, 9.0]))
    assert stats.kstest(st.Z.ravel(), "norm").pvalue > 0.001


def test_model_validation():
    with pytest.raises(ValueError):
        FAModel(d=0, K=1)
    with pytest.raises(ValueError):
        FAModel(d=2, K=1, latent_prior="cauchy")
    with pytest.raises(ValueError):
        FAModel(d=2, K=1, alpha=0.0)
    with pytest.raises(ValueError):
        FAModel(d=2, K=1, latent_prior="scale-mixture", theta_prior="hierarchical")


def test_data_errors():
    model = FAModel(d=2, K=1)
    with pytest.raises(DataError):
        fa.fa_posterior_sample(model, np.zeros((2, 0)), 1)
    with pytest.raises(DataError):
        fa.fa_posterior_sample(model, np.array([[0.0, np.nan], [1.0, 2.0]]), 1)
    with pytest.raises(DataError):
        fa.fa_posterior_sample(model, np.zeros((3, 4)), 1)
    with pytest.raises(ValueError):
        fa.fa_posterior_sample(model, np.zeros((2, 4)), 0)
    with pytest.raises(ValueError):
        fa.fa_gibbs_sweep(model, fa.fa_init(model, np.ones((2, 3))), np.ones((2, 3)), skip=["nope"])


@pytest.mark.parametrize("prior,theta_prior", [
    ("gaussian", "fixed"), ("gaussian", "hierarchical"), ("laplace", "fixed"),
    ("laplace", "hierarchical"), ("scale-mixture", "fixed"),
])
def test_sweeps_keep_joint_finite_and_anchor_fixed(prior, theta_prior):
    model = FAModel(d=4, K=2, latent_prior=prior, theta_prior=theta_prior, alpha=2.0, beta=2.0, M=3)
    _, X = fa.fa_simulate(model, 40, RngStream(7))
    st = fa.fa_init(model, X, RngStream(8))
    for it in range(30):
        st = fa.fa_gibbs_sweep(model, st, X, RngStream(9).child(it))
        assert np.isfinite(fa.fa_log_joint(model, st, X))
        if theta_prior == "hierarchical":
            assert st.tau_z == model.tau_z
        else:
            assert st.tau_theta == 1.0
    if prior == "scale-mixture":
        assert abs(st.pi.sum() - 1) < 1e-12 and np.all((st.m >= 0) & (st.m < model.M))
        assert np.all(st.tau_m > 0)


def test_posterior_sample_reproducible():
    model = FAModel(d=3, K=2, alpha=2.0, beta=2.0)
    _, X = fa.fa_simulate(model, 30, RngStream(10))
    a = fa.fa_posterior_sample(model, X, 20, RngStream(11))
    b = fa.fa_posterior_sample(model, X, 20, RngStream(11))
    for name in ("Z", "theta", "b"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.tau == b.tau and a.tau_z == b.tau_z


def test_skip_leaves_block_unchanged():
    model = FAModel(d=3, K=2, alpha=2.0, beta=2.0)
    _, X = fa.fa_simulate(model, 30, RngStream(12))
    st = fa.fa_init(model, X, RngStream(13))
    new = fa.fa_gibbs_sweep(model, st, X, RngStream(14), skip=("tau", "theta"))
    assert new.tau == st.tau and np.array_equal(new.theta, st.theta)
    assert not np.array_equal(new.Z, st.Z)


def test_aggregation_counts_and_references():
    model = FAModel(d=3, K=2)
    st, _ = fa.fa_simulate(model, 3, RngStream(15))
    uni = fa.fa_aggregate_univariate(st, model)
    biv = fa.fa_aggregate_bivariate(st, model)
    assert uni.size == 6 and biv.size == 3
    assert isinstance(uni.reference, Normal) and uni.reference.tau == st.tau_z
    st4 = FAState(Z=np.arange(8.0).reshape(4, 2), theta=np.zeros((3, 4)), b=np.zeros(3), tau=1.0)
    biv4 = fa.fa_aggregate_bivariate(st4, FAModel(d=3, K=4))
    assert biv4.size == 4 * 3 // 2 * 2
    with pytest.raises(ValueError):
        fa.fa_aggregate_bivariate(FAState(Z=np.zeros((1, 3)), theta=np.zeros((3, 1)), b=np.zeros(3), tau=1.0),
                                  FAModel(d=3, K=1))
    single = FAState(Z=np.zeros((1, 1)), theta=np.zeros((3, 1)), b=np.zeros(3), tau=1.0)
    assert fa.fa_aggregate_univariate(single, FAModel(d=3, K=1)).size == 1


def test_aggregation_references_per_prior():
    lap = FAModel(d=2, K=1, latent_prior="laplace", alpha=2.0, beta=2.0)
    st, _ = fa.fa_simulate(lap, 4, RngStream(16))
    assert isinstance(fa.fa_aggregate_univariate(st, lap).reference, Laplace)
    mix = FAModel(d=2, K=2, latent_prior="scale-mixture", M=4, alpha=2.0, beta=2.0)
    st, _ = fa.fa_simulate(mix, 4, RngStream(17))
    ref = fa.fa_aggregate_univariate(st, mix).reference
    assert isinstance(ref, ScaleMixtureNormal) and np.allclose(ref.weights, st.pi)
    assert fa.fa_aggregate_bivariate(st, mix).reference.dim == 2


def test_replicate_data_shape():
    model = FAModel(d=3, K=2)
    st, X = fa.fa_simulate(model, 10, RngStream(18))
    assert fa.replicate_data(model, st, rng=RngStream(19)).shape == X.shape
    assert fa.replicate_data(model, st, 4, RngStream(19)).shape == (3, 4)


def test_gaussian_fit_is_homoscedastic_on_gaussian_data():
    from latent_critic.critic import binned_conditional
    model = FAModel(d=4, K=2, alpha=2.0, beta=2.0)
    _, X = fa.fa_simulate(model, 4000, RngStream(20), tau=25.0)
    st = fa.fa_posterior_sample(model, X, 200, RngStream(21))
    bc = binned_conditional(fa.fa_aggregate_bivariate(st, model), 5, RngStream(22), reference_draws=0)
    assert bc.std.max() / bc.std.min() < 1.3


@pytest.mark.slow
def test_calibration_small():
    model = FAModel(d=4, K=2, theta_prior="hierarchical", alpha=2.0, beta=2.0)
    qs = []
    for r in range(40):
        g = RngStream(500).child(r)
        _, X = fa.fa_simulate(model, 100, g.child(0))
        st = fa.fa_posterior_sample(model, X, 200, g.child(1))
        qs.append(fa.prior_quantiles(st, model)[::7])
    assert stats.kstest(np.concatenate(qs), "uniform").pvalue > 0.01
