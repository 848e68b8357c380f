"""Gaussian-process regression: stationary kernels, marginal likelihood,
ML fitting, hyperparameter MCMC and eigenbasis projections."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.linalg import solve_triangular

from .dists import Gamma
from .numerics import NumericalRankError, SymEig, as_rng, cho_solve, cholesky, sym_eig

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class OptimizationError(RuntimeError):
    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class MixingWarning(UserWarning):
    pass


# --- kernels -----------------------------------------------------------------

class Kernel:
    """Stationary isotropic kernel evaluated on a matrix of distances."""

    names: tuple = ()

    @property
    def zeta(self) -> np.ndarray:
        raise NotImplementedError

    def with_zeta(self, zeta) -> "Kernel":
        raise NotImplementedError

    def of_distance(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return len(self.zeta)

    def __call__(self, x1, x2=None):
        x2 = x1 if x2 is None else x2
        return self.of_distance(distances(x1, x2))

    def leaves(self):
        return [self]


def _positive(vals, names):
    for v, n in zip(vals, names):
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"kernel hyperparameter {n} must be positive, got {v}")


@dataclass(frozen=True)
class SE(Kernel):
    """sf2 * exp(-r^2 / (2 l^2))"""

    sf2: float = 1.0
    l: float = 1.0
    names = ("sf2", "l")

    def __post_init__(self):
        _positive((self.sf2, self.l), self.names)

    @property
    def zeta(self):
        return np.array([self.sf2, self.l])

    def with_zeta(self, zeta):
        return SE(float(zeta[0]), float(zeta[1]))

    def of_distance(self, r):
        return self.sf2 * np.exp(-0.5 * (r / self.l) ** 2)


@dataclass(frozen=True)
class PeriodicDecay(Kernel):
    """sf2 * exp(-2 sin^2(pi r / p) / lp^2) * exp(-r^2 / (2 ld^2))"""

    sf2: float = 1.0
    p: float = 1.0
    lp: float = 1.0
    ld: float = 1.0
    names = ("sf2", "p", "lp", "ld")

    def __post_init__(self):
        _positive((self.sf2, self.p, self.lp, self.ld), self.names)

    @property
    def zeta(self):
        return np.array([self.sf2, self.p, self.lp, self.ld])

    def with_zeta(self, zeta):
        return PeriodicDecay(*(float(z) for z in zeta))

    def of_distance(self, r):
        s = np.sin(np.pi * r / self.p)
        return self.sf2 * np.exp(-2.0 * s * s / self.lp**2 - 0.5 * (r / self.ld) ** 2)


@dataclass(frozen=True)
class Sum(Kernel):
    children: tuple

    def __post_init__(self):
        if not self.children:
            raise ValueError("Sum kernel needs at least one child")
        object.__setattr__(self, "children", tuple(self.children))

    @property
    def names(self):
        out = []
        for i, c in enumerate(self.children):
            out += [f"{n}_{i}" for n in c.names]
        return tuple(out)

    @property
    def zeta(self):
        return np.concatenate([c.zeta for c in self.children])

    def with_zeta(self, zeta):
        zeta = np.asarray(zeta, dtype=np.float64)
        out, k = [], 0
        for c in self.children:
            out.append(c.with_zeta(zeta[k : k + c.n_params]))
            k += c.n_params
        return Sum(tuple(out))

    def of_distance(self, r):
        return sum(c.of_distance(r) for c in self.children)

    def leaves(self):
        return [leaf for c in self.children for leaf in c.leaves()]


def distances(x1, x2) -> np.ndarray:
    a = np.asarray(x1, dtype=np.float64)
    b = np.asarray(x2, dtype=np.float64)
    if a.ndim == 1 and b.ndim == 1:
        return np.abs(a[:, None] - b[None, :])
    a = a.reshape(a.shape[0], -1)
    b = b.reshape(b.shape[0], -1)
    return np.sqrt(np.maximum(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1), 0.0))


def kernel_stage(name: str) -> Kernel:
    """Starting kernels for the CO2 staircase (values are initial guesses)."""
    name = name.lower()
    if name == "se":
        return SE(100.0, 1.0)
    if name == "periodic":
        return PeriodicDecay(100.0, 1.0, 1.0, 10.0)
    if name == "composite":
        return Sum((PeriodicDecay(5.0, 1.0, 1.0, 50.0), SE(1.0, 1.0), SE(1000.0, 20.0)))
    raise ValueError(f"unknown kernel stage {name!r}")


# --- model -------------------------------------------------------------------

@dataclass(frozen=True)
class GPModel:
    """Zero-mean GP with noise precision ``tau``.

    ``hyperpriors`` (optional) holds one Gamma per kernel hyperparameter
    followed by one for the noise variance 1/tau.
    """

    kernel: Kernel
    tau: float
    hyperpriors: tuple | None = None

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError("noise precision tau must be positive")
        if self.hyperpriors is not None:
            object.__setattr__(self, "hyperpriors", tuple(self.hyperpriors))
            if len(self.hyperpriors) != self.kernel.n_params + 1:
                raise ValueError("need one hyperprior per kernel parameter plus one for the noise")

    @property
    def theta(self) -> np.ndarray:
        """All positive parameters: kernel zeta followed by noise variance."""
        return np.r_[self.kernel.zeta, 1.0 / self.tau]

    def with_theta(self, theta) -> "GPModel":
        theta = np.asarray(theta, dtype=np.float64)
        return replace(self, kernel=self.kernel.with_zeta(theta[:-1]), tau=float(1.0 / theta[-1]))


def gram(kernel: Kernel, tau: float, xs, dist=None) -> np.ndarray:
    """K_ij = k(x_i, x_j) + delta_ij / tau."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    r = distances(xs, xs) if dist is None else dist
    k = kernel.of_distance(r)
    if not np.all(np.isfinite(k)):
        raise FloatingPointError("non-finite kernel value")
    k = 0.5 * (k + k.T)
    k[np.diag_indices_from(k)] += 1.0 / tau
    return k


def log_marginal_likelihood(model: GPModel, xs, y, dist=None) -> float:
    y = np.asarray(y, dtype=np.float64)
    k = gram(model.kernel, model.tau, xs, dist)
    if k.shape[0] != y.size:
        raise ValueError("xs and y differ in length")
    chol = cholesky(k)
    alpha = solve_triangular(chol, y, lower=True, check_finite=False)
    return float(-0.5 * alpha @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * y.size * LOG_2PI)


def _logml_theta(template, dist, y, log_theta):
    try:
        m = template.with_theta(np.exp(log_theta))
        return log_marginal_likelihood(m, None, y, dist)
    except (ValueError, NumericalRankError, FloatingPointError, OverflowError):
        return -np.inf


@dataclass
class MLFit:
    model: GPModel
    log_ml: float
    initial_log_ml: float
    restarts: list = field(default_factory=list)

    @property
    def zeta(self):
        return self.model.kernel.zeta

    @property
    def tau(self):
        return self.model.tau


def ml_fit(template: GPModel, xs, y, restarts: int = 3, rng=None, fixed=None,
           max_evals: int = 4000, jitter_sd: float = 1.0) -> MLFit:
    """Maximize the log marginal likelihood in log-parameter space.

    The first restart starts at ``template``; the rest start from log-normal
    perturbations of it. ``fixed`` is an optional boolean mask over
    ``template.theta`` naming parameters to hold constant.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = as_rng(rng)
    y = np.asarray(y, dtype=np.float64)
    dist = distances(xs, xs)
    theta0 = np.log(template.theta)
    fixed = np.zeros(theta0.size, bool) if fixed is None else np.asarray(fixed, bool)
    free = ~fixed

    def full(v):
        t = theta0.copy()
        t[free] = v
        return t

    def nll(v):
        val = _logml_theta(template, dist, y, full(v))
        return 1e300 if not np.isfinite(val) else -val

    init_val = _logml_theta(template, dist, y, theta0)
    best_v, best_f, runs = theta0[free], -init_val if np.isfinite(init_val) else np.inf, []
    for r in range(restarts):
        start = theta0[free].copy()
        if r > 0:
            start = start + jitter_sd * rng.child(r).normal(start.size)
        res = optimize.minimize(nll, start, method="Nelder-Mead",
                                options={"maxfev": max_evals, "xatol": 1e-6, "fatol": 1e-8, "adaptive": True})
        runs.append((float(-res.fun), np.exp(full(res.x))))
        if res.fun < best_f:
            best_v, best_f = res.x, res.fun
    if not np.isfinite(best_f) or best_f >= 1e300:
        raise OptimizationError("no restart produced a finite marginal likelihood", best=np.exp(full(best_v)))
    # fixed entries keep their exact template values
    model = template.with_theta(np.where(fixed, template.theta, np.exp(full(best_v))))
    return MLFit(model, float(-best_f), float(init_val), runs)


def build_hyperpriors(zeta_ml, tau_ml) -> tuple:
    """Gamma(m, 1) per parameter so that prior mean = variance = m.

    The noise entry uses m = 1/tau_ml (the prior sits on the noise variance).
    """
    vals = np.r_[np.asarray(zeta_ml, dtype=np.float64), 1.0 / float(tau_ml)]
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        raise ValueError("ML values must be positive")
    return tuple(Gamma(float(m), 1.0) for m in vals)


# --- hyperparameter MCMC -----------------------------------------------------

@dataclass
class GPPosteriorSample:
    model: GPModel
    acceptance: float
    log_post: float
    warning: str | None = None

    @property
    def zeta(self):
        return self.model.kernel.zeta

    @property
    def tau(self):
        return self.model.tau


def log_posterior(model: GPModel, xs, y, dist=None) -> float:
    """log ML plus Gamma log hyperpriors (in the natural parameterization)."""
    lp = log_marginal_likelihood(model, xs, y, dist)
    if model.hyperpriors:
        lp += float(sum(g.log_density(t) for g, t in zip(model.hyperpriors, model.theta)))
    return lp


def gp_posterior_sample(model: GPModel, xs, y, burn_in: int = 2000, rng=None, fixed=None,
                        step: float = 0.05, target: float = 0.3) -> GPPosteriorSample:
    """Adaptive random-walk Metropolis on log-parameters; returns the draw
    that follows ``burn_in`` iterations.

    Proposal covariance adapts (scaled empirical covariance plus a
    Robbins-Monro global scale toward acceptance ``target``) during the first
    half of burn-in and is frozen afterwards. The log-space Jacobian is
    included so that the chain targets the posterior over the natural
    parameters.
    """
    if burn_in < 1:
        raise ValueError("burn_in must be >= 1")
    if model.hyperpriors is None:
        raise ValueError("model needs hyperpriors for posterior sampling")
    rng = as_rng(rng)
    y = np.asarray(y, dtype=np.float64)
    dist = distances(xs, xs)
    theta = np.log(model.theta)
    fixed = np.zeros(theta.size, bool) if fixed is None else np.asarray(fixed, bool)
    free = np.flatnonzero(~fixed)
    dim = free.size

    def target_lp(lt):
        try:
            m = model.with_theta(np.exp(lt))
            return log_posterior(m, None, y, dist) + float(np.sum(lt[free]))
        except (ValueError, NumericalRankError, FloatingPointError, OverflowError):
            return -np.inf

    cur = target_lp(theta)
    if not np.isfinite(cur):
        raise ValueError("initial point has zero posterior density")
    if dim == 0:
        return GPPosteriorSample(model, 1.0, cur)

    log_scale = 0.0
    chol_prop = step * np.eye(dim)
    mean = theta[free].copy()
    cov = np.zeros((dim, dim))
    adapt_until = burn_in // 2
    accepted = 0
    n_total = burn_in + 1
    for it in range(n_total):
        g = rng.child(it)
        prop = theta.copy()
        prop[free] += np.exp(log_scale) * (chol_prop @ g.normal(dim))
        new = target_lp(prop)
        a = 0.0 if not np.isfinite(new) else min(1.0, float(np.exp(min(0.0, new - cur))))
        if g.uniform(1)[0] < a:
            theta, cur = prop, new
            accepted += 1
        if it < adapt_until:
            # running moments of the chain, then a rescaled empirical proposal
            k = it + 1
            d = theta[free] - mean
            mean = mean + d / (k + 1)
            cov = cov + (np.outer(d, d) * k / (k + 1) - cov) / (k + 1)
            log_scale += (a - target) / np.sqrt(k)
            if k >= 50 and k % 25 == 0:
                c = (2.38**2 / dim) * cov + 1e-10 * np.eye(dim)
                try:
                    chol_prop = np.linalg.cholesky(c)
                    log_scale = 0.0 if k == 50 else log_scale
                except np.linalg.LinAlgError:
                    pass
    rate = accepted / n_total
    warn = None
    if rate < 0.01:
        warn = f"acceptance rate {rate:.4f} below 1% over burn-in"
        warnings.warn(warn, MixingWarning, stacklevel=2)
    return GPPosteriorSample(model.with_theta(np.exp(theta)), rate, cur, warn)


# --- projections ------------------------------------------------------------

@dataclass
class ProjectionReport:
    eigenvalues: np.ndarray
    c: np.ndarray
    z: np.ndarray
    kept: np.ndarray
    bands: np.ndarray
    threshold: float
    quad_form: float
    quad_form_spectral: float
    eigenvectors: np.ndarray | None = None

    @property
    def kept_indices(self):
        return np.flatnonzero(self.kept)

    @property
    def aps(self) -> np.ndarray:
        return self.z[self.kept]


def project(model: GPModel, xs, y, factor: float = 2.0, keep_vectors: bool = False) -> ProjectionReport:
    """Eigenbasis projections c = U^T y and z = c / sqrt(lambda) of the noisy
    Gram matrix; indices with lambda > factor / tau are kept."""
    y = np.asarray(y, dtype=np.float64)
    k = gram(model.kernel, model.tau, xs)
    eig: SymEig = sym_eig(k)
    lam = eig.eigenvalues
    if np.any(lam <= 0):
        raise NumericalRankError(int(np.argmin(lam)), "Gram matrix has a nonpositive eigenvalue")
    c = eig.eigenvectors.T @ y
    z = c / np.sqrt(lam)
    thr = factor / model.tau
    kept = lam > thr
    quad = float(y @ cho_solve(cholesky(k), y))
    spectral = float(np.sum(c * c / lam))
    rel = abs(quad - spectral) / max(abs(quad), np.finfo(float).tiny)
    if rel > 1e-8:
        log.warning("spectral identity off by %.3g relative", rel)
    if not kept.any():
        log.info("no eigenvalue exceeds %g; projection sample is empty", thr)
    return ProjectionReport(lam, c, z, kept, 1.96 * np.sqrt(lam), thr, quad, spectral,
                            eig.eigenvectors if keep_vectors else None)


def gp_predict(model: GPModel, xs, y, xt, include_noise: bool = False):
    """Posterior mean and variance of f (or y if ``include_noise``) at ``xt``."""
    y = np.asarray(y, dtype=np.float64)
    k = gram(model.kernel, model.tau, xs)
    chol = cholesky(k)
    ks = model.kernel(xt, xs)
    mean = ks @ cho_solve(chol, y)
    v = solve_triangular(chol, ks.T, lower=True, check_finite=False)
    kss = model.kernel.of_distance(np.zeros(np.asarray(xt).shape[0]))
    var = np.maximum(kss - np.sum(v * v, axis=0), 0.0)
    if include_noise:
        var = var + 1.0 / model.tau
    return mean, var
