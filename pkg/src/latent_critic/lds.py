"""Switching linear dynamical system with a blocked Gibbs sampler.

Regimes are 0-based here; the chain is pinned to regime 0 at t = 0::

    z_0 ~ N(0, I),   s_t ~ Cat(pi[s_{t-1}]),
    z_t = A[s_t] z_{t-1} + eps_t,  eps_t ~ N(0, diag(Q[s_t])^-1)
    x_t = B z_t + psi_t,           psi_t ~ N(0, diag(R)^-1)

Entries of A and B are N(0, 1/tau_A) and N(0, 1/tau_B); tau_A, tau_B and
the diagonal precisions Q, R have Gamma priors, transition rows are Dir(1).
Z is stored (p, n) and X (d, n), one column per time step.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._backend import kernels
from .critic import AggregatedSample
from .dists import MVN
from .numerics import as_rng

PAIR_MODES = ("lag1", "cross-dim")


@dataclass(frozen=True)
class SLDSModel:
    S: int
    p: int
    d: int
    alpha: float = 0.001
    beta: float = 0.001
    # optional (alpha, beta) overrides per precision group
    ab_A: tuple | None = None
    ab_B: tuple | None = None
    ab_Q: tuple | None = None
    ab_R: tuple | None = None

    def __post_init__(self):
        if self.S < 1 or self.p < 1 or self.d < 1:
            raise ValueError("S, p and d must be >= 1")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")

    def ab(self, group):
        return getattr(self, f"ab_{group}") or (self.alpha, self.beta)


@dataclass
class SLDSState:
    s: np.ndarray        # (n,) regime indices, s[0] == 0
    Z: np.ndarray        # (p, n)
    A: np.ndarray        # (S, p, p)
    Q: np.ndarray        # (S, p) diagonal precisions
    B: np.ndarray        # (d, p)
    R: np.ndarray        # (d,) diagonal precisions
    pi: np.ndarray       # (S, S) transition rows
    tau_A: float = 1.0
    tau_B: float = 1.0

    def copy(self) -> "SLDSState":
        return SLDSState(**{f.name: (lambda v: v.copy() if isinstance(v, np.ndarray) else v)(getattr(self, f.name))
                            for f in fields(self)})

    @property
    def n(self):
        return self.Z.shape[1]


def _check_data(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != model.d:
        raise ValueError(f"X must have shape ({model.d}, n), got {X.shape}")
    if X.shape[1] == 0:
        raise ValueError("empty data")
    if not np.all(np.isfinite(X)):
        raise ValueError("X has non-finite entries")
    return X


# --- simulation --------------------------------------------------------------

def slds_simulate(model: SLDSModel, n: int, rng=None, **fixed):
    """Draw (truth, X); keyword arguments pin state fields (A, Q, B, R, pi,
    tau_A, tau_B, s) instead of drawing them from the prior."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_rng(rng)
    S, p, d = model.S, model.p, model.d
    g = [rng.child(i) for i in range(10)]
    tau_A = float(fixed.get("tau_A", g[0].gamma(*model.ab("A"))))
    tau_B = float(fixed.get("tau_B", g[1].gamma(*model.ab("B"))))
    A = np.asarray(fixed["A"], float) if "A" in fixed else g[2].normal((S, p, p)) / np.sqrt(tau_A)
    B = np.asarray(fixed["B"], float) if "B" in fixed else g[3].normal((d, p)) / np.sqrt(tau_B)
    Q = np.asarray(fixed["Q"], float) if "Q" in fixed else g[4].gamma(*model.ab("Q"), (S, p))
    R = np.asarray(fixed["R"], float) if "R" in fixed else g[5].gamma(*model.ab("R"), d)
    pi = np.asarray(fixed["pi"], float) if "pi" in fixed else g[6].gen.dirichlet(np.ones(S), S)
    A, Q = A.reshape(S, p, p), Q.reshape(S, p)
    if "s" in fixed:
        s = np.asarray(fixed["s"], dtype=np.intp)
    else:
        u = g[7].uniform(n)
        s = np.zeros(n, dtype=np.intp)
        for t in range(1, n):
            c = np.cumsum(pi[s[t - 1]])
            s[t] = min(int(np.searchsorted(c, u[t] * c[-1], side="right")), S - 1)
    e = g[8].normal((p, n))
    Z = np.zeros((p, n))
    Z[:, 0] = e[:, 0]
    for t in range(1, n):
        Z[:, t] = A[s[t]] @ Z[:, t - 1] + e[:, t] / np.sqrt(Q[s[t]])
    X = B @ Z + g[9].normal((d, n)) / np.sqrt(R)[:, None]
    return SLDSState(s, Z, A, Q, B, R, pi, tau_A, tau_B), X


# --- blocked Gibbs updates ---------------------------------------------------

def slds_ffbs_latents(model: SLDSModel, st: SLDSState, X, rng=None) -> np.ndarray:
    """Joint draw of Z | s, parameters, X by forward filtering / backward sampling."""
    rng = as_rng(rng)
    n = X.shape[1]
    a_seq = np.ascontiguousarray(st.A[st.s])
    q_var = np.ascontiguousarray(1.0 / st.Q[st.s])
    eps = rng.normal((n, model.p))
    z = kernels.kalman_ffbs(a_seq, q_var, np.ascontiguousarray(st.B), 1.0 / st.R,
                            np.ascontiguousarray(X.T), eps)
    return np.asarray(z).T.copy()


def transition_loglik(st: SLDSState) -> np.ndarray:
    """(n, S) log N(z_t; A_j z_{t-1}, Q_j^-1); row 0 is zero."""
    Z = st.Z
    n = Z.shape[1]
    S = st.A.shape[0]
    out = np.zeros((n, S))
    if n < 2:
        return out
    prev, cur = Z[:, :-1], Z[:, 1:]
    for j in range(S):
        r = cur - st.A[j] @ prev
        out[1:, j] = 0.5 * np.sum(np.log(st.Q[j])) - 0.5 * st.Q[j] @ (r * r) - 0.5 * Z.shape[0] * np.log(2 * np.pi)
    return out


def slds_sample_regimes(model: SLDSModel, st: SLDSState, X=None, rng=None) -> np.ndarray:
    """Joint draw of s | Z, parameters with s[0] pinned to regime 0."""
    n = st.Z.shape[1]
    if model.S == 1:
        return np.zeros(n, dtype=np.intp)
    rng = as_rng(rng)
    path = kernels.hmm_ffbs(transition_loglik(st), np.ascontiguousarray(st.pi), 0, rng.uniform(n))
    return np.asarray(path, dtype=np.intp)


def _regress_rows(y, x, row_prec, prior_prec, rng):
    """Draw W (rows independent) for y_k ~ N(W_k x, 1/row_prec_k), W_k ~ N(0, 1/prior_prec)."""
    m, p = y.shape[0], x.shape[0]
    xx = x @ x.T
    xy = x @ y.T                                            # (p, m)
    W = np.empty((m, p))
    e = rng.normal((m, p))
    for k in range(m):
        prec = prior_prec * np.eye(p) + row_prec[k] * xx
        dist = MVN(np.linalg.solve(prec, row_prec[k] * xy[:, k]), prec)
        W[k] = dist.mu + np.linalg.solve(dist._lp.T, e[k])
    return W


def conditional_R(model: SLDSModel, st: SLDSState, X):
    """Gamma (alpha, beta) vectors of R | rest, one per output dimension."""
    a, b = model.ab("R")
    r = X - st.B @ st.Z
    return a + 0.5 * X.shape[1], b + 0.5 * np.sum(r * r, axis=1)


def slds_update_params(model: SLDSModel, st: SLDSState, X, rng=None, skip=()) -> SLDSState:
    """Conjugate draws of A, Q per regime, then B, R, pi and tau_A, tau_B."""
    rng = as_rng(rng)
    st = st.copy()
    S = model.S
    g = [rng.child(i) for i in range(8)]
    prev, cur, s_cur = st.Z[:, :-1], st.Z[:, 1:], st.s[1:]
    aQ, bQ = model.ab("Q")
    for j in range(S):
        sel = s_cur == j
        xj, yj = prev[:, sel], cur[:, sel]
        gj = g[0].child(j)
        if "A" not in skip:
            st.A[j] = _regress_rows(yj, xj, st.Q[j], st.tau_A, gj.child(0))
        if "Q" not in skip:
            r = yj - st.A[j] @ xj
            st.Q[j] = gj.child(1).gamma(aQ + 0.5 * sel.sum(), bQ + 0.5 * np.sum(r * r, axis=1))
    if "B" not in skip:
        st.B = _regress_rows(X, st.Z, st.R, st.tau_B, g[1])
    if "R" not in skip:
        a, b = conditional_R(model, st, X)
        st.R = g[2].gamma(a, b)
    if "pi" not in skip:
        counts = np.zeros((S, S))
        np.add.at(counts, (st.s[:-1], st.s[1:]), 1.0)
        st.pi = np.array([g[3].child(j).gen.dirichlet(1.0 + counts[j]) for j in range(S)])
    aA, bA = model.ab("A")
    aB, bB = model.ab("B")
    if "tau_A" not in skip:
        st.tau_A = float(g[4].gamma(aA + 0.5 * st.A.size, bA + 0.5 * float(np.sum(st.A**2))))
    if "tau_B" not in skip:
        st.tau_B = float(g[5].gamma(aB + 0.5 * st.B.size, bB + 0.5 * float(np.sum(st.B**2))))
    return st


def slds_gibbs_sweep(model: SLDSModel, st: SLDSState, X, rng=None, skip=()) -> SLDSState:
    rng = as_rng(rng)
    st = st.copy()
    if "Z" not in skip:
        st.Z = slds_ffbs_latents(model, st, X, rng.child(0))
    if "s" not in skip:
        st.s = slds_sample_regimes(model, st, X, rng.child(1))
    return slds_update_params(model, st, X, rng.child(2), skip)


def slds_init(model: SLDSModel, X, rng=None) -> SLDSState:
    """Data-driven start: B and Z from a PCA of X, A and Q by least squares
    with a per-regime random perturbation, regimes drawn uniformly."""
    X = _check_data(model, X)
    rng = as_rng(rng)
    S, p, d = model.S, model.p, model.d
    n = X.shape[1]
    xc = X - X.mean(axis=1, keepdims=True)
    u, sv, _ = np.linalg.svd(xc, full_matrices=False)
    k = min(p, u.shape[1])
    B = np.zeros((d, p))
    B[:, :k] = u[:, :k] * (sv[:k] / np.sqrt(n))
    if k < p:
        B[:, k:] = 0.1 * rng.child(0).normal((d, p - k))
    Z = np.linalg.lstsq(B, X, rcond=None)[0]
    resid = X - B @ Z
    R = 1.0 / np.maximum(resid.var(axis=1), 1e-2 * X.var(axis=1) + 1e-12)
    if n > 1:
        A_ls = np.linalg.lstsq(Z[:, :-1].T, Z[:, 1:].T, rcond=None)[0].T
        qv = np.maximum((Z[:, 1:] - A_ls @ Z[:, :-1]).var(axis=1), 1e-6)
    else:
        A_ls, qv = np.zeros((p, p)), np.ones(p)
    pert = 0.1 * rng.child(1).normal((S, p, p)) if S > 1 else np.zeros((1, p, p))
    A = A_ls[None] + pert
    Q = np.tile(1.0 / qv, (S, 1))
    s = np.minimum((rng.child(2).uniform(n) * S).astype(np.intp), S - 1)
    s[0] = 0
    pi = np.full((S, S), 1.0 / S)
    return SLDSState(s, Z, A, Q, B, R, pi, 1.0, 1.0)


def slds_posterior_sample(model: SLDSModel, X, burn_in: int = 10000, rng=None, skip=(),
                          init: SLDSState | None = None) -> SLDSState:
    if burn_in < 1:
        raise ValueError("burn_in must be >= 1")
    X = _check_data(model, X)
    rng = as_rng(rng)
    st = slds_init(model, X, rng.child(0)) if init is None else init.copy()
    chain = rng.child(1)
    for it in range(burn_in + 1):
        st = slds_gibbs_sweep(model, st, X, chain.child(it), skip)
    return st


# --- residuals and aggregation ----------------------------------------------

def slds_latent_residuals(st: SLDSState) -> np.ndarray:
    """Q[s_t]^(1/2) (z_t - A[s_t] z_{t-1}) for t = 1..n-1, shape (p, n-1)."""
    n = st.Z.shape[1]
    if n < 2:
        raise ValueError("residuals need at least 2 time steps")
    prev = st.Z[:, :-1]
    pred = np.einsum("tij,jt->it", st.A[st.s[1:]], prev)
    return np.sqrt(st.Q[st.s[1:]]).T * (st.Z[:, 1:] - pred)


def slds_innovations(st: SLDSState, X) -> np.ndarray:
    """R^(1/2) (x_t - B z_t) for t = 1..n-1, shape (d, n-1)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] < 2:
        raise ValueError("innovations need at least 2 time steps")
    return np.sqrt(st.R)[:, None] * (X[:, 1:] - st.B @ st.Z[:, 1:])


def slds_aggregate_pairs(res, mode: str, label: str = "") -> AggregatedSample:
    """Pairs from a (dims, T) residual matrix against N(0, I_2).

    ``lag1`` pairs each dimension with its own next step; ``cross-dim``
    pairs distinct dimensions (j1 < j2) at the same step.
    """
    res = np.asarray(res, dtype=np.float64)
    if res.ndim != 2 or res.shape[1] < 2:
        raise ValueError("need a (dims, T) matrix with T >= 2")
    if mode == "lag1":
        pairs = np.stack([res[:, :-1].ravel(), res[:, 1:].ravel()], axis=1)
    elif mode == "cross-dim":
        j1, j2 = np.triu_indices(res.shape[0], 1)
        if j1.size == 0:
            raise ValueError("cross-dim pairs need at least 2 dimensions")
        pairs = np.stack([res[j1].ravel(), res[j2].ravel()], axis=1)
    else:
        raise ValueError(f"unknown pair mode {mode!r}; expected one of {PAIR_MODES}")
    return AggregatedSample(pairs, MVN.isotropic(2), label=label or f"slds:{mode}")


def residual_aggregates(st: SLDSState, X):
    """The four pair samples (latent/innovation x lag1/cross-dim)."""
    lat, inn = slds_latent_residuals(st), slds_innovations(st, X)
    out = {}
    for name, res in (("latent", lat), ("innovation", inn)):
        for mode in PAIR_MODES:
            if mode == "cross-dim" and res.shape[0] < 2:
                continue
            out[f"{name}-{mode}"] = slds_aggregate_pairs(res, mode, f"slds:{name}-{mode}")
    return out


def best_permutation_accuracy(truth, path, S: int | None = None) -> float:
    truth = np.asarray(truth, dtype=np.intp)
    path = np.asarray(path, dtype=np.intp)
    S = int(max(truth.max(), path.max()) + 1) if S is None else S
    conf = np.zeros((S, S))
    np.add.at(conf, (path, truth), 1.0)
    rows, cols = linear_sum_assignment(-conf)
    return float(conf[rows, cols].sum() / truth.size)


def _rotation_blocks(p, angle, radius):
    A = np.zeros((p, p))
    for k in range(0, p - 1, 2):
        c, s = np.cos(angle), np.sin(angle)
        A[k : k + 2, k : k + 2] = radius * np.array([[c, -s], [s, c]])
    if p % 2:
        A[p - 1, p - 1] = radius
    return A


def regime_benchmark(S: int = 3, p: int = 4, d: int = 4, rng=None, stay: float = 0.98,
                     q: float = 25.0, r: float = 25.0) -> dict:
    """Well-separated synthetic parameters for segmentation experiments.

    Regimes 0 and 1 rotate each latent plane by +-0.35 rad at radius 0.97,
    regime 2 is a plain contraction (radius 0.6, no rotation) and any further
    regimes alternate sign with larger angles. Transitions are sticky with
    self-probability ``stay``.
    """
    rng = as_rng(rng)
    angles = [0.35 * (1 + j // 2) * (1 if j % 2 == 0 else -1) for j in range(S)]
    if S >= 3:
        angles[2] = 0.0
    A = np.stack([_rotation_blocks(p, a, 0.97 if a else 0.6) for a in angles])
    B = rng.normal((d, p))
    pi = np.full((S, S), (1.0 - stay) / max(S - 1, 1))
    np.fill_diagonal(pi, stay if S > 1 else 1.0)
    return {"A": A, "Q": np.full((S, p), q), "B": B, "R": np.full(d, r), "pi": pi,
            "tau_A": 1.0, "tau_B": 1.0}
