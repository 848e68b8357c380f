"""Probability distributions under the precision parameterization.

Normal-type families take a precision ``tau`` (inverse variance), Laplace
takes a rate ``tau`` (density ``tau/2 exp(-tau|x-mu|)``) and Gamma takes a
shape/rate pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

from .numerics import DimensionError, RngStream, cholesky

LOG_2PI = np.log(2.0 * np.pi)


class UnsupportedOperation(TypeError):
    """The operation is not defined for this family (e.g. cdf of an MVN)."""


def _check_positive(name, value):
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return arr


def _check_simplex(name, w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a nonnegative vector summing to 1, got {w!r}")
    return w


class Distribution:
    """Common interface. ``dim`` is 1 for scalar families."""

    dim = 1

    def log_density(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise UnsupportedOperation(f"{type(self).__name__} has no univariate cdf")

    def sample(self, rng: RngStream, size=None):
        raise NotImplementedError

    def describe(self) -> str:
        return repr(self)


@dataclass(frozen=True)
class Normal(Distribution):
    mu: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        _check_positive("tau", self.tau)
        object.__setattr__(self, "_sd", float(1.0 / np.sqrt(self.tau)))

    @property
    def sd(self) -> float:
        return self._sd

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * np.log(self.tau) - 0.5 * LOG_2PI - 0.5 * self.tau * (x - self.mu) ** 2

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=np.float64) - self.mu) / self._sd)

    def sample(self, rng, size=None):
        return self.mu + self._sd * rng.normal(size)

    def describe(self):
        return f"Normal(mu={self.mu:g}, tau={self.tau:g})"


@dataclass(frozen=True)
class Laplace(Distribution):
    mu: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        _check_positive("tau", self.tau)

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.log(self.tau / 2.0) - self.tau * np.abs(x - self.mu)

    def cdf(self, x):
        y = self.tau * (np.asarray(x, dtype=np.float64) - self.mu)
        return np.where(y < 0, 0.5 * np.exp(np.minimum(y, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(y, 0.0)))

    def sample(self, rng, size=None):
        # inverse cdf on an open-interval uniform
        n = 1 if size is None else int(np.prod(size))
        u = rng.uniform(n) - 0.5
        x = self.mu - np.sign(u) * np.log1p(-2.0 * np.abs(u)) / self.tau
        return float(x[0]) if size is None else x.reshape(size)

    def describe(self):
        return f"Laplace(mu={self.mu:g}, tau={self.tau:g})"


@dataclass(frozen=True)
class Gamma(Distribution):
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        _check_positive("alpha", self.alpha)
        _check_positive("beta", self.beta)

    @property
    def mean(self):
        return self.alpha / self.beta

    @property
    def var(self):
        return self.alpha / self.beta**2

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        a, b = self.alpha, self.beta
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a * np.log(b) - special.gammaln(a) + (a - 1.0) * np.log(x) - b * x
            # boundary: formula limit at x == 0
            at0 = a * np.log(b) - special.gammaln(a) if a == 1.0 else (np.inf if a < 1.0 else -np.inf)
        out = np.where(x > 0, out, np.where(x == 0, at0, -np.inf))
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return special.gammainc(self.alpha, self.beta * np.maximum(x, 0.0))

    def sample(self, rng, size=None):
        return rng.gamma(self.alpha, self.beta, size)

    def describe(self):
        return f"Gamma(alpha={self.alpha:g}, beta={self.beta:g})"


@dataclass(frozen=True, eq=False)
class MVN(Distribution):
    """Multivariate normal with mean ``mu`` and precision matrix ``precision``."""

    mu: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        prec = np.atleast_2d(np.asarray(self.precision, dtype=np.float64))
        if prec.shape != (mu.size, mu.size):
            raise DimensionError(f"precision shape {prec.shape} does not match mean of size {mu.size}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "precision", prec)
        lp = cholesky(prec)
        object.__setattr__(self, "_lp", lp)
        object.__setattr__(self, "_logdet", 2.0 * np.sum(np.log(np.diag(lp))))

    @property
    def dim(self):
        return self.mu.size

    @classmethod
    def isotropic(cls, dim: int, tau: float = 1.0, mu=None):
        mu = np.zeros(dim) if mu is None else mu
        return cls(mu, tau * np.eye(dim))

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"point of dimension {x.shape[-1]} for MVN of dimension {self.dim}")
        r = x - self.mu
        q = np.einsum("...i,ij,...j->...", r, self.precision, r)
        return 0.5 * self._logdet - 0.5 * self.dim * LOG_2PI - 0.5 * q

    def sample(self, rng, size=None):
        # x = mu + L^{-T} e with precision = L L^T, i.e. cov = precision^{-1}
        shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
        e = rng.normal((*shape, self.dim))
        flat = e.reshape(-1, self.dim).T
        x = solve_triangular(self._lp.T, flat, lower=False)
        return (x.T + self.mu).reshape(*shape, self.dim)

    def describe(self):
        if np.allclose(self.precision, self.precision[0, 0] * np.eye(self.dim)) and not np.any(self.mu):
            return f"MVN(0, {1.0 / self.precision[0, 0]:g} I_{self.dim})"
        return f"MVN(dim={self.dim})"


@dataclass(frozen=True, eq=False)
class Dirichlet(Distribution):
    alpha: np.ndarray

    def __post_init__(self):
        a = _check_positive("alpha", np.atleast_1d(self.alpha))
        object.__setattr__(self, "alpha", a)

    @property
    def dim(self):
        return self.alpha.size

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionError("Dirichlet point has wrong dimension")
        a = self.alpha
        log_b = np.sum(special.gammaln(a)) - special.gammaln(a.sum())
        inside = np.all(x > 0, axis=-1) & (np.abs(x.sum(axis=-1) - 1.0) < 1e-12)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.sum((a - 1.0) * np.log(x), axis=-1) - log_b
        return np.where(inside, val, -np.inf)

    def sample(self, rng, size=None):
        shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
        g = rng.gen.standard_gamma(self.alpha, (*shape, self.dim))
        return g / g.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class Categorical(Distribution):
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _check_simplex("probs", self.probs))

    def log_density(self, x):
        x = np.asarray(x)
        with np.errstate(divide="ignore"):
            lp = np.log(self.probs)
        ok = (x >= 0) & (x < self.probs.size)
        return np.where(ok, lp[np.clip(x, 0, self.probs.size - 1).astype(int)], -np.inf)

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        c = np.cumsum(self.probs)
        idx = np.searchsorted(c, rng.uniform(n) * c[-1], side="right")
        idx = np.minimum(idx, np.flatnonzero(self.probs > 0)[-1])
        return int(idx[0]) if size is None else idx.reshape(size)


@dataclass(frozen=True, eq=False)
class ScaleMixtureNormal(Distribution):
    """sum_m w_m N(0, tau_m^{-1} I_dim); components share one scale across coordinates."""

    weights: np.ndarray
    precisions: np.ndarray
    d: int = 1

    def __post_init__(self):
        w = _check_simplex("weights", self.weights)
        t = _check_positive("precisions", np.atleast_1d(self.precisions))
        if t.shape != w.shape:
            raise DimensionError("weights and precisions differ in length")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "precisions", t)

    @property
    def dim(self):
        return self.d

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.d == 1:
            r2 = x**2
        else:
            if x.shape[-1] != self.d:
                raise DimensionError("point has wrong dimension for scale mixture")
            r2 = np.sum(x**2, axis=-1)
        r2 = np.asarray(r2)[..., None]
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        comp = logw + 0.5 * self.d * (np.log(self.precisions) - LOG_2PI) - 0.5 * self.precisions * r2
        return special.logsumexp(comp, axis=-1)

    def cdf(self, x):
        if self.d != 1:
            raise UnsupportedOperation("cdf needs a univariate scale mixture")
        x = np.asarray(x, dtype=np.float64)[..., None]
        return np.sum(self.weights * special.ndtr(x * np.sqrt(self.precisions)), axis=-1)

    def sample(self, rng, size=None):
        shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
        n = int(np.prod(shape)) if shape else 1
        comp = Categorical(self.weights).sample(rng, n)
        sd = 1.0 / np.sqrt(self.precisions[comp])
        e = rng.normal((n, self.d)) * sd[:, None]
        if self.d == 1:
            e = e[:, 0]
            return float(e[0]) if not shape else e.reshape(shape)
        return e[0] if not shape else e.reshape(*shape, self.d)

    def describe(self):
        return f"ScaleMixtureNormal(M={self.weights.size}, d={self.d})"


@dataclass(frozen=True, eq=False)
class IIDProduct(Distribution):
    """``dim`` independent copies of a univariate family (factorized reference)."""

    base: Distribution
    d: int = 2

    @property
    def dim(self):
        return self.d

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d:
            raise DimensionError("point has wrong dimension for product")
        return np.sum(self.base.log_density(x), axis=-1)

    def sample(self, rng, size=None):
        shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
        return np.asarray(self.base.sample(rng, (*shape, self.d)))

    def describe(self):
        return f"{self.base.describe()}^{self.d}"


def log_density(d: Distribution, x):
    return d.log_density(x)


def cdf(d: Distribution, x):
    return d.cdf(x)


def sample(d: Distribution, rng: RngStream, size=None):
    return d.sample(rng, size)
