"""Bayesian factor analysis with Gaussian, Laplace or scale-mixture latents.

Model, with X of shape (d, n) and columns x_i::

    x_i ~ N(Theta z_i + b, tau^-1 I),  b ~ N(0, I),  tau ~ Gamma(alpha, beta)

Scale anchoring follows one of two variants:

* ``theta_prior="fixed"``: theta_jk ~ N(0, 1) and the latent scale is
  learned (tau_z, the Laplace rate, or the mixture precisions get Gamma
  hyperpriors).
* ``theta_prior="hierarchical"``: theta_jk ~ N(0, tau_theta^-1) with
  tau_theta ~ Gamma and the latent scale held at ``tau_z``.

The Laplace prior is handled through its normal/exponential mixture
representation, z | v ~ N(0, v), v ~ Exp(rate lambda^2 / 2), which keeps
every conditional in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy import stats

from .critic import AggregatedSample
from .dists import MVN, Gamma, IIDProduct, Laplace, Normal, ScaleMixtureNormal
from .numerics import RngStream, as_rng

LATENT_PRIORS = ("gaussian", "laplace", "scale-mixture")
THETA_PRIORS = ("fixed", "hierarchical")
SKIPPABLE = frozenset({"z", "theta", "b", "tau", "tau_theta", "latent_scale", "mixture"})


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class FAModel:
    d: int
    K: int
    latent_prior: str = "gaussian"
    theta_prior: str = "fixed"
    alpha: float = 0.001
    beta: float = 0.001
    tau_z: float = 1.0
    M: int = 8
    # hyperprior overrides; None means reuse (alpha, beta)
    latent_ab: tuple | None = None
    theta_ab: tuple | None = None

    def __post_init__(self):
        if self.d < 1 or self.K < 1:
            raise ValueError("d and K must be >= 1")
        if self.latent_prior not in LATENT_PRIORS:
            raise ValueError(f"latent_prior must be one of {LATENT_PRIORS}")
        if self.theta_prior not in THETA_PRIORS:
            raise ValueError(f"theta_prior must be one of {THETA_PRIORS}")
        for name in ("alpha", "beta", "tau_z"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.theta_prior == "hierarchical" and self.latent_prior == "scale-mixture":
            raise ValueError("the scale mixture learns its own scales; use theta_prior='fixed'")
        if self.M < 1:
            raise ValueError("M must be >= 1")

    @property
    def latent_scale_fixed(self) -> bool:
        return self.theta_prior == "hierarchical"

    @property
    def ab_latent(self):
        return self.latent_ab or (self.alpha, self.beta)

    @property
    def ab_theta(self):
        return self.theta_ab or (self.alpha, self.beta)


@dataclass
class FAState:
    Z: np.ndarray                 # (K, n)
    theta: np.ndarray             # (d, K)
    b: np.ndarray                 # (d,)
    tau: float
    tau_z: float = 1.0            # Gaussian precision or Laplace rate
    tau_theta: float = 1.0
    v: np.ndarray | None = None   # (K, n) Laplace mixing variances
    pi: np.ndarray | None = None  # (M,)
    tau_m: np.ndarray | None = None
    m: np.ndarray | None = None   # (n,) component index per column

    def copy(self) -> "FAState":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        return FAState(**{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in kw.items()})

    @property
    def n(self):
        return self.Z.shape[1]


def _check_data(model: FAModel, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != model.d:
        raise DataError(f"X must have shape ({model.d}, n), got {X.shape}")
    if X.shape[1] == 0:
        raise DataError("empty data")
    if not np.all(np.isfinite(X)):
        raise DataError("X has non-finite entries")
    return X


# --- forward simulation ------------------------------------------------------

def _draw_latents(model: FAModel, st: FAState, n: int, rng: RngStream):
    K = model.K
    if model.latent_prior == "gaussian":
        st.Z = rng.normal((K, n)) / np.sqrt(st.tau_z)
    elif model.latent_prior == "laplace":
        lam = st.tau_z
        st.v = rng.gen.exponential(2.0 / lam**2, (K, n))
        st.Z = rng.normal((K, n)) * np.sqrt(st.v)
    else:
        c = np.cumsum(st.pi)
        st.m = np.minimum(np.searchsorted(c, rng.uniform(n) * c[-1], side="right"), model.M - 1)
        st.Z = rng.normal((K, n)) / np.sqrt(st.tau_m[st.m])[None, :]


def fa_simulate(model: FAModel, n: int, rng=None, **fixed):
    """Draw (truth, X) from the joint. Keyword arguments pin any state field
    (e.g. ``tau=100.0`` or ``theta=...``) instead of drawing it from its prior."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_rng(rng)
    d, K = model.d, model.K
    a_l, b_l = model.ab_latent
    a_t, b_t = model.ab_theta
    st = FAState(Z=np.zeros((K, n)), theta=np.zeros((d, K)), b=np.zeros(d), tau=1.0)
    streams = {name: rng.child(i) for i, name in enumerate(
        ("tau", "tau_theta", "theta", "b", "latent_scale", "mixture", "Z", "noise"))}
    st.tau = float(fixed.get("tau", streams["tau"].gamma(model.alpha, model.beta)))
    if model.theta_prior == "hierarchical":
        st.tau_theta = float(fixed.get("tau_theta", streams["tau_theta"].gamma(a_t, b_t)))
    st.theta = np.asarray(fixed["theta"], dtype=np.float64) if "theta" in fixed else \
        streams["theta"].normal((d, K)) / np.sqrt(st.tau_theta)
    st.b = np.asarray(fixed["b"], dtype=np.float64) if "b" in fixed else streams["b"].normal(d)
    if model.latent_prior == "scale-mixture":
        g = streams["mixture"]
        st.pi = np.asarray(fixed["pi"], dtype=np.float64) if "pi" in fixed else \
            g.gen.dirichlet(np.ones(model.M))
        st.tau_m = np.asarray(fixed["tau_m"], dtype=np.float64) if "tau_m" in fixed else \
            g.gamma(a_l, b_l, model.M)
    elif model.latent_scale_fixed:
        st.tau_z = float(fixed.get("tau_z", model.tau_z))
    else:
        st.tau_z = float(fixed.get("tau_z", streams["latent_scale"].gamma(a_l, b_l)))
    if "Z" in fixed:
        st.Z = np.asarray(fixed["Z"], dtype=np.float64)
    else:
        _draw_latents(model, st, n, streams["Z"])
    mean = st.theta @ st.Z + st.b[:, None]
    X = mean + streams["noise"].normal((d, n)) / np.sqrt(st.tau)
    return st, X


# --- full conditionals -------------------------------------------------------

def cond_tau(model: FAModel, st: FAState, X) -> Gamma:
    r = X - st.theta @ st.Z - st.b[:, None]
    return Gamma(model.alpha + 0.5 * X.size, model.beta + 0.5 * float(np.sum(r * r)))


def cond_b(model: FAModel, st: FAState, X) -> MVN:
    n = X.shape[1]
    prec = 1.0 + n * st.tau
    mean = st.tau * np.sum(X - st.theta @ st.Z, axis=1) / prec
    return MVN(mean, prec * np.eye(model.d))


def cond_theta_row_precision(model: FAModel, st: FAState):
    return st.tau * (st.Z @ st.Z.T) + st.tau_theta * np.eye(model.K)


def cond_theta_row(model: FAModel, st: FAState, X, j: int) -> MVN:
    prec = cond_theta_row_precision(model, st)
    mean = np.linalg.solve(prec, st.tau * st.Z @ (X[j] - st.b[j]))
    return MVN(mean, prec)


def _latent_prior_precision(model: FAModel, st: FAState):
    """Per-column diagonal prior precision of z_i, shape (K, n)."""
    n = st.Z.shape[1]
    if model.latent_prior == "gaussian":
        return np.full((model.K, n), st.tau_z)
    if model.latent_prior == "laplace":
        return 1.0 / st.v
    return np.broadcast_to(st.tau_m[st.m][None, :], (model.K, n))


def cond_z(model: FAModel, st: FAState, X, i: int) -> MVN:
    prec = st.tau * st.theta.T @ st.theta + np.diag(_latent_prior_precision(model, st)[:, i])
    mean = np.linalg.solve(prec, st.tau * st.theta.T @ (X[:, i] - st.b))
    return MVN(mean, prec)


# --- Gibbs updates -----------------------------------------------------------

def _update_z(model, st, X, rng):
    K, n = st.Z.shape
    t = st.tau
    proj = t * st.theta.T @ (X - st.b[:, None])          # (K, n)
    e = rng.normal((K, n))
    if model.latent_prior == "laplace":
        # per-column diagonal prior: batched Cholesky of K x K precisions
        prec = t * (st.theta.T @ st.theta)[None, :, :] + np.einsum("ki,kl->ikl", 1.0 / st.v, np.eye(K))
        L = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, proj.T[:, :, None])[:, :, 0]
        # z = mean + L^-T e
        noise = np.linalg.solve(np.swapaxes(L, 1, 2), e.T[:, :, None])[:, :, 0]
        st.Z = (mean + noise).T
        return
    # isotropic prior precision s_i: diagonalize Theta^T Theta once
    w, V = np.linalg.eigh(st.theta.T @ st.theta)
    s = st.tau_z if model.latent_prior == "gaussian" else st.tau_m[st.m]
    denom = t * w[:, None] + np.broadcast_to(s, (n,))[None, :]   # (K, n)
    st.Z = V @ ((V.T @ proj) / denom + e / np.sqrt(denom))


def _update_theta(model, st, X, rng):
    prec = cond_theta_row_precision(model, st)
    L = np.linalg.cholesky(prec)
    rhs = st.tau * st.Z @ (X - st.b[:, None]).T            # (K, d)
    mean = np.linalg.solve(prec, rhs)
    e = rng.normal((model.K, model.d))
    noise = np.linalg.solve(L.T, e)
    st.theta = (mean + noise).T


def _update_b(model, st, X, rng):
    c = cond_b(model, st, X)
    st.b = c.mu + rng.normal(model.d) / np.sqrt(c.precision[0, 0])


def _update_tau(model, st, X, rng):
    c = cond_tau(model, st, X)
    st.tau = float(rng.gamma(c.alpha, c.beta))


def _update_tau_theta(model, st, rng):
    a, b = model.ab_theta
    st.tau_theta = float(rng.gamma(a + 0.5 * st.theta.size, b + 0.5 * float(np.sum(st.theta**2))))


def _update_latent_scale(model, st, rng, skip_scale):
    a, b = model.ab_latent
    if model.latent_prior == "gaussian":
        if not skip_scale:
            st.tau_z = float(rng.gamma(a + 0.5 * st.Z.size, b + 0.5 * float(np.sum(st.Z**2))))
    elif model.latent_prior == "laplace":
        absz = np.maximum(np.abs(st.Z), 1e-300)
        if not skip_scale:
            # rate | z with the mixing variances integrated out
            st.tau_z = float(rng.gamma(a + st.Z.size, b + float(np.sum(absz))))
        lam = st.tau_z
        inv_v = stats.invgauss.rvs(mu=(lam / absz) / lam**2, scale=lam**2, random_state=rng.gen)
        st.v = 1.0 / np.maximum(inv_v, 1e-300)


def _update_mixture(model, st, rng):
    a, b = model.ab_latent
    K, n = st.Z.shape
    r2 = np.sum(st.Z**2, axis=0)                             # (n,)
    with np.errstate(divide="ignore"):
        logp = (np.log(st.pi)[:, None] + 0.5 * K * np.log(st.tau_m)[:, None]
                - 0.5 * st.tau_m[:, None] * r2[None, :])       # (M, n)
    logp -= logp.max(axis=0, keepdims=True)
    p = np.exp(logp)
    c = np.cumsum(p, axis=0)
    u = rng.uniform(n) * c[-1]
    st.m = np.minimum((c < u[None, :]).sum(axis=0), model.M - 1)
    counts = np.bincount(st.m, minlength=model.M)
    sums = np.bincount(st.m, weights=r2, minlength=model.M)
    st.pi = rng.gen.dirichlet(1.0 + counts)
    st.pi = np.maximum(st.pi, 0.0)
    st.pi /= st.pi.sum()
    st.tau_m = rng.gamma(a + 0.5 * K * counts, b + 0.5 * sums)


def fa_gibbs_sweep(model: FAModel, state: FAState, X, rng=None, skip=()) -> FAState:
    """One systematic-scan sweep; returns a new state.

    ``skip`` names blocks left unchanged (used for mutation testing).
    """
    X = _check_data(model, X)
    skip = frozenset(skip)
    if skip - SKIPPABLE:
        raise ValueError(f"unknown blocks {sorted(skip - SKIPPABLE)}")
    rng = as_rng(rng)
    st = state.copy()
    g = [rng.child(i) for i in range(7)]
    if "z" not in skip:
        _update_z(model, st, X, g[0])
    if model.latent_prior == "scale-mixture":
        if "mixture" not in skip:
            _update_mixture(model, st, g[1])
    elif "latent_scale" not in skip or model.latent_prior == "laplace":
        _update_latent_scale(model, st, g[1],
                             skip_scale=model.latent_scale_fixed or "latent_scale" in skip)
    if "theta" not in skip:
        _update_theta(model, st, X, g[2])
    if model.theta_prior == "hierarchical" and "tau_theta" not in skip:
        _update_tau_theta(model, st, g[3])
    if "b" not in skip:
        _update_b(model, st, X, g[4])
    if "tau" not in skip:
        _update_tau(model, st, X, g[5])
    return st


def fa_init(model: FAModel, X, rng=None) -> FAState:
    """Theta from its prior, Z = 0, b = row means, tau = 1 / sample variance."""
    X = _check_data(model, X)
    rng = as_rng(rng)
    d, n = X.shape
    K = model.K
    st = FAState(
        Z=np.zeros((K, n)),
        theta=rng.child(0).normal((d, K)),
        b=X.mean(axis=1),
        tau=float(1.0 / max(X.var(), 1e-12)),
        tau_z=model.tau_z,
    )
    if model.latent_prior == "laplace":
        st.v = np.full((K, n), 2.0 / st.tau_z**2)
    if model.latent_prior == "scale-mixture":
        st.pi = np.full(model.M, 1.0 / model.M)
        st.tau_m = np.exp(np.linspace(-2.0, 2.0, model.M))
        st.m = np.minimum((rng.child(1).uniform(n) * model.M).astype(np.intp), model.M - 1)
    return st


def fa_posterior_sample(model: FAModel, X, burn_in: int = 1000, rng=None, skip=(),
                        init: FAState | None = None) -> FAState:
    """Run ``burn_in`` sweeps from the default initialization and return the
    state produced by the next sweep."""
    if burn_in < 1:
        raise ValueError("burn_in must be >= 1")
    X = _check_data(model, X)
    rng = as_rng(rng)
    st = fa_init(model, X, rng.child(0)) if init is None else init.copy()
    chain = rng.child(1)
    for it in range(burn_in + 1):
        st = fa_gibbs_sweep(model, st, X, chain.child(it), skip)
    return st


def fa_log_joint(model: FAModel, st: FAState, X) -> float:
    """log p(state, X) with Laplace mixing variances integrated out."""
    X = _check_data(model, X)
    d, n = X.shape
    lp = float(np.sum(Normal(0.0, st.tau).log_density(X - st.theta @ st.Z - st.b[:, None])))
    lp += float(np.sum(Normal().log_density(st.b)))
    lp += float(Gamma(model.alpha, model.beta).log_density(st.tau))
    lp += float(np.sum(Normal(0.0, st.tau_theta).log_density(st.theta)))
    a_l, b_l = model.ab_latent
    if model.theta_prior == "hierarchical":
        lp += float(Gamma(*model.ab_theta).log_density(st.tau_theta))
    if model.latent_prior == "scale-mixture":
        ref = ScaleMixtureNormal(st.pi, st.tau_m, d=model.K)
        lp += float(np.sum(ref.log_density(st.Z.T)))
        lp += float(np.sum(Gamma(a_l, b_l).log_density(st.tau_m)))
    else:
        fam = Normal(0.0, st.tau_z) if model.latent_prior == "gaussian" else Laplace(0.0, st.tau_z)
        lp += float(np.sum(fam.log_density(st.Z)))
        if not model.latent_scale_fixed:
            lp += float(Gamma(a_l, b_l).log_density(st.tau_z))
    return lp


# --- aggregation -------------------------------------------------------------

def latent_reference(model: FAModel, st: FAState, dim: int = 1):
    if model.latent_prior == "gaussian":
        base = Normal(0.0, st.tau_z)
    elif model.latent_prior == "laplace":
        base = Laplace(0.0, st.tau_z)
    else:
        return ScaleMixtureNormal(st.pi, np.maximum(st.tau_m, np.finfo(float).tiny), d=dim)
    return base if dim == 1 else IIDProduct(base, dim)


def fa_aggregate_univariate(state: FAState, model: FAModel) -> AggregatedSample:
    """All K*n latent scalars against the latent prior at the drawn hyperparameters."""
    return AggregatedSample(state.Z.ravel(), latent_reference(model, state), label="fa:z")


def fa_aggregate_bivariate(state: FAState, model: FAModel) -> AggregatedSample:
    """Pairs (z_k1 i, z_k2 i) over k1 < k2 and all i."""
    K = state.Z.shape[0]
    if K < 2:
        raise ValueError("bivariate aggregation needs K >= 2")
    k1, k2 = np.triu_indices(K, 1)
    pairs = np.stack([state.Z[k1].ravel(), state.Z[k2].ravel()], axis=1)
    return AggregatedSample(pairs, latent_reference(model, state, 2), label="fa:z-pairs")


def prior_quantiles(state: FAState, model: FAModel) -> np.ndarray:
    """Reference-cdf values of the pooled latents (uniform under calibration)."""
    return latent_reference(model, state).cdf(state.Z.ravel())


def replicate_data(model: FAModel, st: FAState, n: int | None = None, rng=None) -> np.ndarray:
    """Fresh latents from the fitted prior pushed through the fitted likelihood."""
    rng = as_rng(rng)
    n = st.n if n is None else n
    rep = st.copy()
    _draw_latents(model, rep, n, rng.child(0))
    return rep.theta @ rep.Z + rep.b[:, None] + rng.child(1).normal((model.d, n)) / np.sqrt(rep.tau)
