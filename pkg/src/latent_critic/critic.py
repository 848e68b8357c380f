"""Model-agnostic checks: ECDF, KS, correlation, binned conditionals, MMD and
the observation-space predictive p-values."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from ._backend import kernels
from .dists import Distribution, UnsupportedOperation
from .numerics import RngStream, as_rng


class DegenerateSampleError(ValueError):
    """A statistic is undefined for the given sample (empty, constant, too small)."""


@dataclass
class AggregatedSample:
    """Pooled posterior values with the reference they should follow.

    ``values`` is shape (n,) for univariate samples and (n, 2) for pairs.
    """

    values: np.ndarray
    reference: Distribution
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim not in (1, 2) or (self.values.ndim == 2 and self.values.shape[1] != 2):
            raise ValueError(f"values must be (n,) or (n, 2), got {self.values.shape}")
        if self.reference.dim != self.arity:
            raise ValueError(f"reference of dimension {self.reference.dim} for arity-{self.arity} sample")

    @property
    def arity(self) -> int:
        return 1 if self.values.ndim == 1 else 2

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    p_value: float
    n: int

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")


@dataclass(frozen=True)
class ECDF:
    """Right-continuous step function on the unique sorted support."""

    support: np.ndarray
    heights: np.ndarray

    def __call__(self, x):
        idx = np.searchsorted(self.support, np.asarray(x, dtype=np.float64), side="right")
        return np.where(idx > 0, self.heights[np.maximum(idx - 1, 0)], 0.0)


def ecdf(values) -> ECDF:
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise DegenerateSampleError("ecdf of an empty sample")
    support, counts = np.unique(v, return_counts=True)
    return ECDF(support, np.cumsum(counts) / v.size)


def kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """Survival function of the limiting Kolmogorov distribution.

    Uses the alternating series sum 2(-1)^{k-1} exp(-2 k^2 lam^2) where it
    converges quickly, and the dual theta-function series for small
    ``lam`` where the alternating one does not.
    """
    lam = float(lam)
    if lam <= 0.0:
        return 1.0
    if lam < 1.0:
        # P(K <= lam) = sqrt(2 pi)/lam * sum exp(-(2k-1)^2 pi^2 / (8 lam^2))
        acc = 0.0
        for k in range(1, terms + 1):
            term = np.exp(-((2 * k - 1) ** 2) * np.pi**2 / (8.0 * lam * lam))
            acc += term
            if term < 1e-16 * acc:
                break
        return float(min(1.0, max(0.0, 1.0 - np.sqrt(2.0 * np.pi) / lam * acc)))
    acc = 0.0
    for k in range(1, terms + 1):
        term = 2.0 * (-1) ** (k - 1) * np.exp(-2.0 * k * k * lam * lam)
        acc += term
        if abs(term) < 1e-12:
            break
    return float(min(1.0, max(0.0, acc)))


def kolmogorov_pvalue(d: float, n: int) -> float:
    """Asymptotic KS p-value with the (sqrt(n) + 0.12 + 0.11/sqrt(n)) correction."""
    rn = np.sqrt(n)
    return kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d)


def ks_statistic(values, cdf: Callable) -> float:
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    return float(kernels.ks_sup(x, cdf(x)))


def ks_test(aps: AggregatedSample) -> TestResult:
    if aps.arity != 1:
        raise UnsupportedOperation("KS test needs a univariate aggregated sample")
    if aps.size == 0:
        raise DegenerateSampleError("KS test on an empty sample")
    d = ks_statistic(aps.values, aps.reference.cdf)
    return TestResult("ks", d, kolmogorov_pvalue(d, aps.size), aps.size)


def pearson_test(aps: AggregatedSample | np.ndarray, name: str = "pearson") -> TestResult:
    """Pearson correlation with the two-sided Student-t p-value."""
    pairs = aps.values if isinstance(aps, AggregatedSample) else np.asarray(aps, dtype=np.float64)
    n = pairs.shape[0]
    if n < 3:
        raise DegenerateSampleError("correlation test needs at least 3 pairs")
    x = pairs[:, 0] - pairs[:, 0].mean()
    y = pairs[:, 1] - pairs[:, 1].mean()
    sxx, syy = np.dot(x, x), np.dot(y, y)
    if sxx == 0 or syy == 0:
        raise DegenerateSampleError("constant coordinate in correlation test")
    r = float(np.clip(np.dot(x, y) / np.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        return TestResult(name, r, 0.0, n)
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 2)))
    return TestResult(name, r, p, n)


@dataclass
class BinnedConditional:
    """Conditional mean/std of the second coordinate in bins of the first.

    ``reference_mean``/``reference_std`` hold the same statistics for
    Monte Carlo draws from the reference distribution, in the same bins.
    """

    edges: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    counts: np.ndarray
    reference_mean: np.ndarray = field(default=None)
    reference_std: np.ndarray = field(default=None)

    @property
    def centers(self):
        e = self.edges.copy()
        e[0], e[-1] = self.edges[1] if e.size > 2 else 0.0, self.edges[-2] if e.size > 2 else 0.0
        return 0.5 * (e[:-1] + e[1:])


def _bin_stats(x, y, edges):
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, edges.size - 2)
    nb = edges.size - 1
    counts = np.bincount(idx, minlength=nb)
    sums = np.bincount(idx, weights=y, minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / counts
        sq = np.bincount(idx, weights=(y - mean[idx]) ** 2, minlength=nb)
        std = np.sqrt(sq / counts)
    return mean, std, counts


def binned_conditional(aps: AggregatedSample, bins: int = 100, rng: RngStream | None = None,
                       reference_draws: int = 100_000) -> BinnedConditional:
    """Equal-count bins on coordinate 1; the outer edges are open (+-inf)."""
    if aps.arity != 2:
        raise UnsupportedOperation("binned conditional needs pairs")
    x, y = aps.values[:, 0], aps.values[:, 1]
    if bins < 1 or x.size < bins:
        raise DegenerateSampleError(f"need at least {bins} pairs for {bins} bins, got {x.size}")
    inner = np.quantile(x, np.arange(1, bins) / bins) if bins > 1 else np.empty(0)
    edges = np.r_[-np.inf, inner, np.inf]
    mean, std, counts = _bin_stats(x, y, edges)
    out = BinnedConditional(edges, mean, std, counts)
    if reference_draws:
        ref = np.asarray(aps.reference.sample(as_rng(rng), reference_draws))
        out.reference_mean, out.reference_std, _ = _bin_stats(ref[:, 0], ref[:, 1], edges)
    return out


def abs_correlation_test(aps: AggregatedSample) -> TestResult:
    """Heuristic variance-correlation score: Pearson test on (|z1|, |z2|).

    Not a calibrated test of the factorized reference; it flags the
    bowtie-shaped dependence that marginal checks miss.
    """
    return pearson_test(np.abs(aps.values), name="abs-pearson")


# --- maximum mean discrepancy ----------------------------------------------

def _as_points(a):
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    return a[:, None] if a.ndim == 1 else a


def _rbf(a, b, bandwidth):
    d2 = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
    return np.exp(-np.maximum(d2, 0.0) / (2.0 * bandwidth**2))


def median_heuristic(a, b) -> float:
    pts = np.vstack([_as_points(a), _as_points(b)])
    if pts.shape[0] > 2000:
        pts = pts[:: int(np.ceil(pts.shape[0] / 2000))]
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    med = np.sqrt(np.median(d2[np.triu_indices(pts.shape[0], 1)])) if pts.shape[0] > 1 else 0.0
    return float(med) if med > 0 else 1.0


def _canonical(a):
    return a[np.lexsort(a.T[::-1])] if a.shape[0] > 1 else a


def mmd(obs, rep, bandwidth: float | None = None):
    """Biased (V-statistic) squared MMD with a Gaussian RBF kernel.

    Returns ``(mmd2, witness)`` where ``witness(t)`` is the mean kernel
    embedding of ``obs`` minus that of ``rep`` evaluated at points ``t``.
    """
    a, b = _as_points(obs), _as_points(rep)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DegenerateSampleError("MMD needs nonempty samples")
    if bandwidth is None:
        bandwidth = median_heuristic(a, b)
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    # canonical row order and argument order keep the estimate exactly symmetric
    a, b = _canonical(a), _canonical(b)
    first, second = (a, b) if (a.shape[0], a.tobytes()) <= (b.shape[0], b.tobytes()) else (b, a)
    kaa = _rbf(first, first, bandwidth).mean()
    kbb = _rbf(second, second, bandwidth).mean()
    kab = _rbf(first, second, bandwidth).mean()
    mmd2 = max(0.0, float(kaa + kbb - 2.0 * kab))

    def witness(t):
        t = _as_points(t)
        return _rbf(t, a, bandwidth).mean(axis=1) - _rbf(t, b, bandwidth).mean(axis=1)

    return mmd2, witness


# --- observation-space predictive p-values -----------------------------------

def _indicator_pvalue(name, x_obs, discrepancy, draw, R, rng):
    if R < 1:
        raise ValueError("need at least one replicate")
    rng = as_rng(rng)
    exceed = 0
    d_obs_total = 0.0
    for r in range(R):
        x_rep, u = draw(rng.child(r))
        d_obs = discrepancy(x_obs, u)
        d_obs_total += d_obs
        exceed += bool(discrepancy(x_rep, u) > d_obs)
    return TestResult(name, d_obs_total / R, exceed / R, R)


def pvalue_plugin(x_obs, discrepancy, replicate, u_hat, R: int, rng=None) -> TestResult:
    """Pr(D(X_rep, u_hat) > D(x_obs, u_hat)) with X_rep ~ replicate(u_hat, rng)."""
    return _indicator_pvalue("plug-in", x_obs, discrepancy,
                             lambda g: (replicate(u_hat, g), u_hat), R, rng)


def pvalue_prior(x_obs, discrepancy, joint_sampler, R: int, rng=None) -> TestResult:
    """Prior predictive p-value; ``joint_sampler(rng)`` returns ``(x_rep, u)``."""
    return _indicator_pvalue("prior-predictive", x_obs, discrepancy, joint_sampler, R, rng)


def pvalue_posterior(x_obs, discrepancy, posterior_sampler, replicate, R: int, rng=None) -> TestResult:
    """Posterior predictive p-value with ``u_r ~ posterior_sampler(rng)`` and
    ``x_rep ~ replicate(u_r, rng)``."""

    def draw(g):
        u = posterior_sampler(g.child(0))
        return replicate(u, g.child(1)), u

    return _indicator_pvalue("posterior-predictive", x_obs, discrepancy, draw, R, rng)
