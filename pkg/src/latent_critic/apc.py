"""End-to-end aggregated posterior checks: one posterior draw, pooled
samples, tests against their references, and plot-ready tables."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import fa, gp, lds
from .critic import (
    AggregatedSample,
    TestResult,
    abs_correlation_test,
    binned_conditional,
    ecdf,
    ks_test,
    pearson_test,
)
from .dists import Normal
from .numerics import as_rng

log = logging.getLogger(__name__)

MODELS = ("fa", "slds", "gp")
DEFAULT_BURN_IN = {"fa": 1000, "slds": 10000, "gp": 2000}
ECDF_POINTS = 2000
PAIR_POINTS = 5000


@dataclass
class RunConfig:
    model: str = "fa"
    data: str | None = None
    out: str = "out"
    seed: int = 0
    burn_in: int | None = None
    latent_prior: str = "gaussian"
    K: int = 16
    regimes: int = 1
    p: int = 4
    kernel: str = "se"
    restarts: int = 2
    bins: int = 100
    replicates: int = 100
    threads: int = 1
    n: int = 200
    d: int = 4
    patches: int = 50000
    alpha: float = 0.001
    beta: float = 0.001
    split_year: int = 2004

    def validate(self) -> "RunConfig":
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.latent_prior not in fa.LATENT_PRIORS:
            raise ValueError(f"latent-prior must be one of {fa.LATENT_PRIORS}")
        if self.kernel not in ("se", "periodic", "composite"):
            raise ValueError("kernel must be se, periodic or composite")
        for name in ("K", "regimes", "p", "restarts", "bins", "replicates", "threads", "n", "d", "patches"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.burn_in is not None and self.burn_in < 1:
            raise ValueError("burn-in must be >= 1")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        return self

    @property
    def effective_burn_in(self) -> int:
        return self.burn_in if self.burn_in is not None else DEFAULT_BURN_IN[self.model]

    def hash(self) -> str:
        """Digest of everything that affects results (not out or threads)."""
        d = {k: v for k, v in asdict(self).items() if k not in ("out", "threads")}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Check:
    check_id: str
    aps: AggregatedSample | None
    result: TestResult

    def record(self, model: str, config_hash: str, seed: int) -> dict:
        ref = self.aps.reference.describe() if self.aps is not None else ""
        return {
            "check_id": self.check_id,
            "model": model,
            "test": self.result.name,
            "aps_size": int(self.result.n),
            "statistic": float(self.result.statistic),
            "p_value": float(self.result.p_value),
            "reference": ref,
            "config_hash": config_hash,
            "seed": int(seed),
        }


@dataclass
class APCResult:
    model: str
    checks: list
    tables: dict = field(default_factory=dict)   # name -> (header, rows)
    meta: dict = field(default_factory=dict)
    state: object = None

    def p_values(self) -> dict:
        return {c.check_id: c.result.p_value for c in self.checks}


# --- plot tables ------------------------------------------------------------

def ecdf_rows(name: str, aps: AggregatedSample, points: int = ECDF_POINTS):
    v = np.sort(aps.values)
    if v.size > points:
        v = v[np.linspace(0, v.size - 1, points).round().astype(np.intp)]
    f = ecdf(aps.values)
    return [(name, x, e, r) for x, e, r in zip(v, f(v), aps.reference.cdf(v))]


def pair_rows(name: str, aps: AggregatedSample, points: int = PAIR_POINTS):
    vals = aps.values
    if vals.shape[0] > points:
        vals = vals[np.linspace(0, vals.shape[0] - 1, points).round().astype(np.intp)]
    return [(name, a, b) for a, b in vals]


def binned_rows(name: str, bc):
    out = []
    for i in range(bc.mean.size):
        out.append((name, i, bc.edges[i], bc.edges[i + 1], int(bc.counts[i]), bc.mean[i], bc.std[i],
                    bc.reference_mean[i], bc.reference_std[i]))
    return out


TABLE_HEADERS = {
    "ecdf": ("aps", "value", "empirical", "reference"),
    "pairs": ("aps", "u", "v"),
    "binned": ("aps", "bin", "lo", "hi", "count", "mean", "std", "reference_mean", "reference_std"),
    "projections": ("index", "eigenvalue", "c", "z", "band", "kept"),
    "states": ("t", "state", "label"),
    "fit": ("x", "y", "mean", "var", "split"),
}


def _add(tables, name, rows):
    tables.setdefault(name, (TABLE_HEADERS[name], []))[1].extend(rows)


# --- per-model pipelines -----------------------------------------------------

def _run_fa(X, cfg: RunConfig, rng):
    X = np.asarray(X, dtype=np.float64)
    model = fa.FAModel(d=X.shape[0], K=cfg.K, latent_prior=cfg.latent_prior, alpha=cfg.alpha, beta=cfg.beta)
    st = fa.fa_posterior_sample(model, X, cfg.effective_burn_in, rng.child(0))
    uni = fa.fa_aggregate_univariate(st, model)
    checks = [Check("fa:z:ks", uni, ks_test(uni))]
    tables = {}
    _add(tables, "ecdf", ecdf_rows("fa:z", uni))
    meta = {"tau": st.tau, "tau_z": st.tau_z}
    if model.K >= 2:
        biv = fa.fa_aggregate_bivariate(st, model)
        checks.append(Check("fa:z-pairs:abs-pearson", biv, abs_correlation_test(biv)))
        if biv.size >= cfg.bins:
            bc = binned_conditional(biv, cfg.bins, rng.child(1))
            _add(tables, "binned", binned_rows("fa:z-pairs", bc))
        _add(tables, "pairs", pair_rows("fa:z-pairs", biv))
    return checks, tables, meta, st


def _run_slds(X, cfg: RunConfig, rng, labels=None):
    X = np.asarray(X, dtype=np.float64)
    model = lds.SLDSModel(S=cfg.regimes, p=cfg.p, d=X.shape[0], alpha=cfg.alpha, beta=cfg.beta)
    st = lds.slds_posterior_sample(model, X, cfg.effective_burn_in, rng.child(0))
    lat = lds.slds_latent_residuals(st)
    inn = lds.slds_innovations(st, X)
    checks, tables = [], {}
    for name, res in (("latent", lat), ("innovation", inn)):
        aps = AggregatedSample(res.ravel(), Normal(), label=f"slds:{name}")
        checks.append(Check(f"slds:{name}:ks", aps, ks_test(aps)))
        _add(tables, "ecdf", ecdf_rows(f"slds:{name}", aps))
    for key, aps in lds.residual_aggregates(st, X).items():
        checks.append(Check(f"slds:{key}:pearson", aps, pearson_test(aps)))
        _add(tables, "pairs", pair_rows(f"slds:{key}", aps))
    lab = np.full(st.s.size, -1) if labels is None else np.asarray(labels)
    _add(tables, "states", [(t, int(s), int(l)) for t, (s, l) in enumerate(zip(st.s, lab))])
    meta = {}
    if labels is not None:
        meta["segmentation_accuracy"] = lds.best_permutation_accuracy(labels, st.s)
    return checks, tables, meta, st


def gp_template(kernel: str, y) -> gp.GPModel:
    """Starting point for ML fitting of each CO2 stage, scaled to the data."""
    v = float(np.var(y))
    if kernel == "se":
        k = gp.SE(v, 0.3)
    elif kernel == "periodic":
        k = gp.PeriodicDecay(v, 1.0, 5.0, 6.0)
    else:
        k = gp.Sum((gp.PeriodicDecay(5.0, 1.0, 1.5, 70.0), gp.SE(0.5, 0.8), gp.SE(10.0 * v, 30.0)))
    return gp.GPModel(k, 10.0)


def run_gp_stage(x, y, kernel: str, burn_in: int, rng, restarts: int = 2, x_test=None):
    rng = as_rng(rng)
    fit = gp.ml_fit(gp_template(kernel, y), x, y, restarts=restarts, rng=rng.child(0))
    hp = gp.build_hyperpriors(fit.zeta, fit.tau)
    model = gp.GPModel(fit.model.kernel, fit.tau, hp)
    draw = gp.gp_posterior_sample(model, x, y, burn_in, rng.child(1))
    rep = gp.project(draw.model, x, y)
    return fit, draw, rep


def _run_gp(data, cfg: RunConfig, rng):
    x, y = data.x_train, data.y_train
    fit, draw, rep = run_gp_stage(x, y, cfg.kernel, cfg.effective_burn_in, rng, cfg.restarts)
    aps = AggregatedSample(rep.aps, Normal(), label=f"gp:{cfg.kernel}")
    checks, tables = [], {}
    if aps.size:
        checks.append(Check(f"gp:{cfg.kernel}:ks", aps, ks_test(aps)))
        _add(tables, "ecdf", ecdf_rows(f"gp:{cfg.kernel}", aps))
    _add(tables, "projections", [(i, rep.eigenvalues[i], rep.c[i], rep.z[i], rep.bands[i], int(rep.kept[i]))
                                 for i in range(rep.c.size)])
    rows = []
    for split, xs_, ys_ in (("train", x, y), ("test", data.x_test, data.y_test)):
        if len(xs_):
            mu, var = gp.gp_predict(draw.model, x, y, xs_)
            rows += [(a, b + data.offset, m + data.offset, v, split) for a, b, m, v in zip(xs_, ys_, mu, var)]
    _add(tables, "fit", rows)
    meta = {
        "zeta_ml": fit.zeta.tolist(), "tau_ml": fit.tau, "log_ml": fit.log_ml,
        "zeta_draw": draw.zeta.tolist(), "tau_draw": draw.tau, "acceptance": draw.acceptance,
        "kept": int(rep.kept.sum()), "warning": draw.warning,
    }
    return checks, tables, meta, draw


def run_apc(model: str, data, config: RunConfig | None = None, rng=None) -> APCResult:
    """Posterior draw, aggregation and tests for ``model`` in {fa, slds, gp}.

    ``data`` is a (d, n) matrix for fa, a (d, n) matrix or ``(X, labels)``
    for slds, and a :class:`~latent_critic.dataio.CO2Data` for gp.
    """
    cfg = config or RunConfig(model=model)
    cfg.model = model
    cfg.validate()
    rng = as_rng(cfg.seed if rng is None else rng)
    if model == "fa":
        checks, tables, meta, st = _run_fa(data, cfg, rng)
    elif model == "slds":
        X, labels = data if isinstance(data, tuple) else (data, None)
        checks, tables, meta, st = _run_slds(X, cfg, rng, labels)
    else:
        checks, tables, meta, st = _run_gp(data, cfg, rng)
    return APCResult(model, checks, tables, meta, st)
