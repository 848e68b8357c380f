"""Command-line front end: ``latent-critic {apc,simulate,calibrate}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import dataio, fa, gp, lds
from .apc import APCResult, RunConfig, run_apc
from .critic import AggregatedSample, TestResult, ks_test
from .dists import Gamma, Normal
from .numerics import RngStream

log = logging.getLogger("latent_critic")

MIN_REPLICATES = 20

FLAG_TO_FIELD = {"burn-in": "burn_in", "latent-prior": "latent_prior", "split-year": "split_year"}


# --- config -------------------------------------------------------------------

def read_config_file(path) -> dict:
    """Flat ``key = value`` file; keys mirror the long flags; # starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            k, v = (t.strip() for t in s.split("=", 1))
            k = FLAG_TO_FIELD.get(k, k.replace("-", "_"))
            if k not in RunConfig.field_names():
                raise ValueError(f"{path}:{lineno}: unknown key {k!r}")
            out[k] = v
    return out


def _coerce(name, value):
    if value is None:
        return None
    ftype = {f.name: f.type for f in fields(RunConfig)}[name]
    t = str(ftype)
    if "int" in t:
        return int(value)
    if "float" in t:
        return float(value)
    return str(value)


CALIBRATION_DEFAULTS = {"alpha": 2.0, "beta": 2.0, "burn_in": 1000}


def build_config(args, defaults=None) -> RunConfig:
    values = dict(defaults or {})
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in RunConfig.field_names():
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if "seed" not in values:
        env = os.environ.get("LATENT_CRITIC_SEED")
        if env is not None:
            values["seed"] = env
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    return cfg.validate()


# --- output -------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_table(path: Path, header, rows, cfg_hash: str, seed: int):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash} seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def emit(result: APCResult, cfg: RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    write_json(out / "results.json", [c.record(cfg.model, h, cfg.seed) for c in result.checks])
    for name, (header, rows) in sorted(result.tables.items()):
        write_table(out / f"{name}.csv", header, rows, h, cfg.seed)
    cfg_d = {k: v for k, v in asdict(cfg).items() if k not in ("out", "threads")}
    write_json(out / "run.json", {"config": cfg_d, "config_hash": h, "seed": cfg.seed, "meta": result.meta})


# --- data loading ------------------------------------------------------------

def load_matrix_csv(path):
    """CSV with a header row; numeric columns become rows of a (d, n) matrix.
    A ``label`` column, if present, is returned separately."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if len(rows) < 2:
        raise dataio.ParseError("matrix CSV needs a header and at least one row")
    header = [h.strip() for h in rows[0]]
    labels = None
    body = rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise dataio.ParseError(f"non-numeric matrix entry: {exc}") from None
    if "label" in header:
        j = header.index("label")
        labels = data[:, j].astype(np.intp)
        data = np.delete(data, j, axis=1)
    return data.T.copy(), labels


def load_for_model(cfg: RunConfig, rng):
    if cfg.data is None:
        raise ValueError("--data is required")
    path = Path(cfg.data)
    if cfg.model == "gp":
        return dataio.load_co2(path, cfg.split_year)
    if cfg.model == "fa":
        if path.is_dir():
            imgs = [dataio.load_pgm(p) for p in sorted(path.glob("*.pgm"))]
            return dataio.extract_patches(imgs, cfg.patches, 8, rng.child(99))
        return load_matrix_csv(path)[0]
    with open(path) as fh:
        head = fh.readline().lower().replace(" ", "")
    if head.startswith("x,y,theta"):
        ts = dataio.load_bee(path)
        return ts.matrix().T.copy(), ts.labels
    return load_matrix_csv(path)


# --- commands -----------------------------------------------------------------

def cmd_apc(cfg: RunConfig) -> int:
    rng = RngStream(cfg.seed)
    data = load_for_model(cfg, rng)
    result = run_apc(cfg.model, data, cfg, rng)
    emit(result, cfg, Path(cfg.out))
    for c in result.checks:
        log.info("%s: statistic=%.6g p=%.4g (n=%d)", c.check_id, c.result.statistic, c.result.p_value, c.result.n)
    return 0


def simulate_fa(cfg: RunConfig, rng):
    """Gaussian/Laplace latents at unit scale, or a two-component scale mixture."""
    model = fa.FAModel(d=cfg.d, K=cfg.K, latent_prior=cfg.latent_prior, alpha=cfg.alpha, beta=cfg.beta,
                       M=2 if cfg.latent_prior == "scale-mixture" else 8)
    pins = {"tau": 25.0}
    if cfg.latent_prior == "scale-mixture":
        pins.update(pi=np.array([0.5, 0.5]), tau_m=np.array([0.25, 4.0]))
    else:
        pins["tau_z"] = 1.0
    return fa.fa_simulate(model, cfg.n, rng, **pins)


def simulate_slds(cfg: RunConfig, rng):
    model = lds.SLDSModel(S=cfg.regimes, p=cfg.p, d=cfg.d)
    params = lds.regime_benchmark(cfg.regimes, cfg.p, cfg.d, rng.child(0))
    return lds.slds_simulate(model, cfg.n, rng.child(1), **params)


def simulate_gp(cfg: RunConfig, rng, sf2=1.0, ell=1.0, tau=100.0):
    x = np.arange(cfg.n, dtype=np.float64) / 12.0
    k = gp.gram(gp.SE(sf2, ell), tau, x)
    y = np.linalg.cholesky(k) @ rng.normal(cfg.n)
    return x, y, {"kernel": "se", "sf2": sf2, "l": ell, "tau": tau}


def _state_dict(st):
    return {f.name: getattr(st, f.name) for f in fields(st)}


def cmd_simulate(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngStream(cfg.seed)
    h = cfg.hash()
    if cfg.model == "fa":
        truth, X = simulate_fa(cfg, rng)
        header = [f"x{j}" for j in range(X.shape[0])]
        write_table(out / "data.csv", header, X.T.tolist(), h, cfg.seed)
        truth_d = _state_dict(truth)
    elif cfg.model == "slds":
        truth, X = simulate_slds(cfg, rng)
        header = [f"x{j}" for j in range(X.shape[0])] + ["label"]
        write_table(out / "data.csv", header, [list(col) + [int(s)] for col, s in zip(X.T, truth.s)], h, cfg.seed)
        truth_d = _state_dict(truth)
    else:
        x, y, truth_d = simulate_gp(cfg, rng)
        write_table(out / "data.csv", ("decimal_date", "value"), list(zip(x, y)), h, cfg.seed)
    write_json(out / "truth.json", {"config_hash": h, "seed": cfg.seed, "truth": truth_d})
    return 0


# --- calibration --------------------------------------------------------------

def _calibration_fa(cfg, rng, skip):
    model = fa.FAModel(d=cfg.d, K=min(cfg.K, cfg.d), theta_prior="hierarchical", alpha=cfg.alpha, beta=cfg.beta)
    truth, X = fa.fa_simulate(model, cfg.n, rng.child(0))
    st = fa.fa_posterior_sample(model, X, cfg.effective_burn_in, rng.child(1), skip=skip)
    q_z = fa.prior_quantiles(st, model)
    prior = Gamma(model.alpha, model.beta)
    return {
        "fa:z-quantile:ks": ks_test(AggregatedSample(q_z, _UNIFORM)).p_value,
        "fa:tau:prior-quantile": float(prior.cdf(st.tau)),
        "fa:tau_theta:prior-quantile": float(Gamma(*model.ab_theta).cdf(st.tau_theta)),
    }


def _calibration_slds(cfg, rng, skip):
    model = lds.SLDSModel(S=1, p=cfg.p, d=cfg.d, alpha=cfg.alpha, beta=cfg.beta, ab_A=(10.0, 1.0), ab_B=(2.0, 2.0))
    truth, X = lds.slds_simulate(model, cfg.n, rng.child(0))
    st = lds.slds_posterior_sample(model, X, cfg.effective_burn_in, rng.child(1), skip=skip)
    out = {}
    for name, res in (("latent", lds.slds_latent_residuals(st)), ("innovation", lds.slds_innovations(st, X))):
        out[f"slds:{name}:ks"] = ks_test(AggregatedSample(res.ravel(), Normal())).p_value
    out["slds:R:prior-quantile"] = float(Gamma(*model.ab("R")).cdf(st.R[0]))
    return out


def _calibration_gp(cfg, rng, skip):
    x, y, _ = simulate_gp(cfg, rng.child(0))
    rep = gp.project(gp.GPModel(gp.SE(1.0, 1.0), 100.0), x, y)
    return {"gp:projection:ks": ks_test(AggregatedSample(rep.aps, Normal())).p_value}


class _Uniform:
    dim = 1

    def cdf(self, x):
        return np.clip(x, 0.0, 1.0)

    def describe(self):
        return "Uniform(0, 1)"


_UNIFORM = _Uniform()

CALIBRATORS = {"fa": _calibration_fa, "slds": _calibration_slds, "gp": _calibration_gp}


def run_calibration(cfg: RunConfig, skip=()):
    """Per-replication calibration values and KS-vs-uniform meta p-values."""
    if cfg.replicates < MIN_REPLICATES:
        raise ValueError(f"calibration needs at least {MIN_REPLICATES} replicates")
    fn = CALIBRATORS[cfg.model]
    root = RngStream(cfg.seed)

    def one(r):
        return fn(cfg, root.child(r), skip)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            per_rep = list(ex.map(one, range(cfg.replicates)))
    else:
        per_rep = [one(r) for r in range(cfg.replicates)]
    meta = {}
    for key in per_rep[0]:
        vals = np.array([rep[key] for rep in per_rep])
        meta[key] = TestResult("ks-uniform", *_ks_uniform(vals), vals.size)
    return per_rep, meta


def _ks_uniform(vals):
    res = ks_test(AggregatedSample(vals, _UNIFORM))
    return res.statistic, res.p_value


def cmd_calibrate(cfg: RunConfig, skip=()) -> int:
    per_rep, meta = run_calibration(cfg, skip)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    rows = [(r, k, v) for r, rep in enumerate(per_rep) for k, v in sorted(rep.items())]
    write_table(out / "calibration.csv", ("replication", "check_id", "value"), rows, h, cfg.seed)
    records = [{
        "check_id": f"calibration:{k}", "model": cfg.model, "test": m.name, "aps_size": m.n,
        "statistic": m.statistic, "p_value": m.p_value, "reference": "Uniform(0, 1)",
        "config_hash": h, "seed": cfg.seed,
    } for k, m in sorted(meta.items())]
    write_json(out / "results.json", records)
    for rec in records:
        log.info("%s: meta-p=%.4g", rec["check_id"], rec["p_value"])
    return 0


# --- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latent-critic", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--config", help="key=value file mirroring the long flags")
    common.add_argument("--model", choices=("fa", "slds", "gp"))
    common.add_argument("--data")
    common.add_argument("--out")
    common.add_argument("--seed", type=int)
    common.add_argument("--burn-in", dest="burn_in", type=int)
    common.add_argument("--latent-prior", dest="latent_prior", choices=fa.LATENT_PRIORS)
    common.add_argument("--regimes", type=int)
    common.add_argument("--kernel", choices=("se", "periodic", "composite"))
    common.add_argument("--bins", type=int)
    common.add_argument("--replicates", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--K", "--latent-dim", dest="K", type=int)
    common.add_argument("--p", "--state-dim", dest="p", type=int)
    common.add_argument("--d", "--obs-dim", dest="d", type=int)
    common.add_argument("--n", type=int)
    common.add_argument("--restarts", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--beta", type=float)
    sub.add_parser("apc", parents=[common], help="run aggregated posterior checks on data")
    sub.add_parser("simulate", parents=[common], help="generate synthetic data and ground truth")
    cal = sub.add_parser("calibrate", parents=[common], help="simulation-based calibration study")
    cal.add_argument("--skip-update", action="append", default=[],
                     help="leave a sampler block unchanged (mutation testing)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out or "out")
    try:
        cfg = build_config(args, CALIBRATION_DEFAULTS if args.command == "calibrate" else None)
        out = Path(cfg.out)
        if args.command == "apc":
            return cmd_apc(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_calibrate(cfg, tuple(args.skip_update))
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "error.json", {
            "error": type(exc).__name__, "message": str(exc), "command": args.command,
            "traceback": traceback.format_exc().splitlines()[-3:],
        })
        print(f"latent-critic: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
